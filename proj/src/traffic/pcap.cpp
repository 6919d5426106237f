// SPDX-License-Identifier: Apache-2.0
#include "traffic/pcap.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "errors.hpp"

namespace netmamba::traffic {

namespace {

constexpr std::size_t kGlobalHeader = 24;
constexpr std::size_t kRecordHeader = 16;

struct Reader {
  std::span<const std::uint8_t> bytes;
  bool big_endian = false;

  std::uint32_t u32(std::size_t at) const {
    const auto* p = bytes.data() + at;
    if (big_endian) return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
    return (std::uint32_t(p[3]) << 24) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[1]) << 8) | p[0];
  }
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

std::vector<RawPacket> parse_capture(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kGlobalHeader) throw ParseError("truncated pcap global header", bytes.size());
  Reader r{bytes, false};
  const std::uint32_t magic = r.u32(0);
  bool nano = false;
  switch (magic) {
    case 0xa1b2c3d4: break;
    case 0xd4c3b2a1: r.big_endian = true; break;
    case 0xa1b23c4d: nano = true; break;
    case 0x4d3cb2a1: r.big_endian = true; nano = true; break;
    default: {
      char buf[16];
      std::snprintf(buf, sizeof buf, "0x%08x", magic);
      throw UnsupportedFormat(std::string("unknown pcap magic ") + buf);
    }
  }
  const std::uint32_t link = r.u32(20);
  if (link != kLinkTypeEthernet)
    throw UnsupportedFormat("unsupported link type " + std::to_string(link) + " (only Ethernet is accepted)");

  std::vector<RawPacket> out;
  std::size_t off = kGlobalHeader;
  while (off < bytes.size()) {
    if (bytes.size() - off < kRecordHeader) throw ParseError("truncated pcap record header", off);
    RawPacket p;
    p.ts_sec = r.u32(off);
    const std::uint32_t frac = r.u32(off + 4);
    const std::uint32_t incl = r.u32(off + 8);
    p.orig_len = r.u32(off + 12);
    p.ts_nsec = nano ? frac : frac * 1000u;
    if (bytes.size() - off - kRecordHeader < incl)
      throw ParseError("truncated pcap record (incl_len " + std::to_string(incl) + ")", off);
    const auto* data = bytes.data() + off + kRecordHeader;
    p.link_bytes.assign(data, data + incl);
    if (p.orig_len < incl) p.orig_len = incl;
    out.push_back(std::move(p));
    off += kRecordHeader + incl;
  }
  return out;
}

std::vector<RawPacket> parse_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_capture(std::span<const std::uint8_t>(bytes));
}

std::vector<std::uint8_t> write_capture(const std::vector<RawPacket>& packets, bool nanosecond,
                                        std::uint32_t link_type, std::uint32_t snaplen) {
  std::vector<std::uint8_t> out;
  put_u32(out, nanosecond ? 0xa1b23c4d : 0xa1b2c3d4);
  put_u16(out, 2);
  put_u16(out, 4);
  put_u32(out, 0);
  put_u32(out, 0);
  put_u32(out, snaplen);
  put_u32(out, link_type);
  for (const auto& p : packets) {
    put_u32(out, static_cast<std::uint32_t>(p.ts_sec));
    put_u32(out, nanosecond ? p.ts_nsec : p.ts_nsec / 1000u);
    put_u32(out, static_cast<std::uint32_t>(p.link_bytes.size()));
    put_u32(out, std::max<std::uint32_t>(p.orig_len, static_cast<std::uint32_t>(p.link_bytes.size())));
    out.insert(out.end(), p.link_bytes.begin(), p.link_bytes.end());
  }
  return out;
}

}  // namespace netmamba::traffic
