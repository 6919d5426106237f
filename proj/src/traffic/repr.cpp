// SPDX-License-Identifier: Apache-2.0
#include "traffic/repr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "errors.hpp"

namespace netmamba::traffic {

namespace {

constexpr std::uint16_t kEtherIPv4 = 0x0800;
constexpr std::uint16_t kEtherIPv6 = 0x86DD;
constexpr std::uint8_t kProtoTCP = 6;
constexpr std::uint8_t kProtoUDP = 17;
constexpr std::size_t kEthernetHeader = 14;
constexpr std::size_t kVlanTag = 4;

std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

bool is_vlan(std::uint16_t ethertype) { return ethertype == 0x8100 || ethertype == 0x88a8 || ethertype == 0x9100; }

bool is_dhcp_port(std::uint16_t p) { return p == 67 || p == 68 || p == 546 || p == 547; }

enum class Verdict { kIp, kNonIp, kDhcp };

Verdict strip(const RawPacket& p, const ReprConfig& cfg, std::span<const std::uint8_t>& ip) {
  std::span<const std::uint8_t> link(p.link_bytes);
  if (link.size() < kEthernetHeader)
    throw MalformedPacket("frame of " + std::to_string(link.size()) + " bytes is shorter than an Ethernet header");
  std::uint16_t ethertype = be16(link, 12);
  std::size_t off = kEthernetHeader;
  while (is_vlan(ethertype)) {
    if (link.size() < off + kVlanTag) throw MalformedPacket("truncated VLAN tag");
    ethertype = be16(link, off + 2);
    off += kVlanTag;
  }
  if (ethertype != kEtherIPv4 && ethertype != kEtherIPv6) return Verdict::kNonIp;
  ip = link.subspan(off);
  if (cfg.drop_dhcp) {
    const IpInfo info = parse_ip(ip);
    if (info.protocol == kProtoUDP && info.has_ports && (is_dhcp_port(info.src_port) || is_dhcp_port(info.dst_port)))
      return Verdict::kDhcp;
  }
  return Verdict::kIp;
}

}  // namespace

void ReprConfig::validate() const {
  if (packets_per_flow < 1) throw ConfigError("packets_per_flow must be at least 1");
  if (packet_bytes() < 1) throw ConfigError("header_bytes + payload_bytes must be at least 1");
  if (stride_len < 1) throw ConfigError("stride_len must be at least 1");
  if (flow_bytes() % stride_len != 0)
    throw ConfigError("flow array of " + std::to_string(flow_bytes()) + " bytes is not divisible by stride_len " +
                      std::to_string(stride_len));
}

std::string FiveTuple::to_string() const {
  auto addr = [&](const std::array<std::uint8_t, 16>& a) {
    char buf[64];
    if (ip_version == 4) {
      std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", a[0], a[1], a[2], a[3]);
    } else {
      std::string s;
      for (int i = 0; i < 16; i += 2) {
        char g[8];
        std::snprintf(g, sizeof g, i ? ":%x" : "%x", (a[i] << 8) | a[i + 1]);
        s += g;
      }
      return "[" + s + "]";
    }
    return std::string(buf);
  };
  return addr(ip_a) + ":" + std::to_string(port_a) + " <-> " + addr(ip_b) + ":" + std::to_string(port_b) +
         " proto " + std::to_string(protocol);
}

IpInfo parse_ip(std::span<const std::uint8_t> b) {
  if (b.empty()) throw MalformedPacket("empty IP datagram");
  IpInfo info;
  info.version = b[0] >> 4;
  bool first_fragment = true;
  if (info.version == 4) {
    if (b.size() < 20) throw MalformedPacket("IPv4 header truncated");
    info.ip_header_len = std::size_t(b[0] & 0x0f) * 4;
    if (info.ip_header_len < 20) throw MalformedPacket("IPv4 IHL below minimum");
    if (info.ip_header_len > b.size()) throw MalformedPacket("IPv4 IHL exceeds packet length");
    const std::size_t total = be16(b, 2);
    info.datagram_len = (total >= info.ip_header_len && total <= b.size()) ? total : b.size();
    info.protocol = b[9];
    first_fragment = (be16(b, 6) & 0x1fff) == 0;
  } else if (info.version == 6) {
    if (b.size() < 40) throw MalformedPacket("IPv6 header truncated");
    const std::size_t payload = be16(b, 4);
    info.datagram_len = (payload > 0 && 40 + payload <= b.size()) ? 40 + payload : b.size();
    std::uint8_t next = b[6];
    std::size_t off = 40;
    while (next == 0 || next == 43 || next == 44 || next == 51 || next == 60) {
      if (off + 8 > info.datagram_len) throw MalformedPacket("IPv6 extension header truncated");
      std::size_t len;
      if (next == 44) {
        len = 8;
        first_fragment = (be16(b, off + 2) & 0xfff8) == 0;
      } else if (next == 51) {
        len = (std::size_t(b[off + 1]) + 2) * 4;
      } else {
        len = (std::size_t(b[off + 1]) + 1) * 8;
      }
      next = b[off];
      off += len;
      if (off > info.datagram_len) throw MalformedPacket("IPv6 extension header exceeds packet length");
    }
    info.ip_header_len = off;
    info.protocol = next;
  } else {
    throw MalformedPacket("IP version nibble " + std::to_string(info.version) + " is neither 4 nor 6");
  }
  if (first_fragment && (info.protocol == kProtoTCP || info.protocol == kProtoUDP) &&
      info.datagram_len >= info.ip_header_len + 4) {
    info.has_ports = true;
    info.src_port = be16(b, info.ip_header_len);
    info.dst_port = be16(b, info.ip_header_len + 2);
  }
  return info;
}

FiveTuple flow_key(std::span<const std::uint8_t> b) {
  const IpInfo info = parse_ip(b);
  FiveTuple k;
  k.ip_version = info.version;
  k.protocol = info.protocol;
  std::array<std::uint8_t, 16> src{}, dst{};
  if (info.version == 4) {
    std::copy_n(b.begin() + 12, 4, src.begin());
    std::copy_n(b.begin() + 16, 4, dst.begin());
  } else {
    std::copy_n(b.begin() + 8, 16, src.begin());
    std::copy_n(b.begin() + 24, 16, dst.begin());
  }
  auto a = std::make_pair(src, info.src_port);
  auto c = std::make_pair(dst, info.dst_port);
  if (c < a) std::swap(a, c);
  k.ip_a = a.first;
  k.port_a = a.second;
  k.ip_b = c.first;
  k.port_b = c.second;
  return k;
}

std::optional<Bytes> classify_and_strip(const RawPacket& p, const ReprConfig& cfg) {
  std::span<const std::uint8_t> ip;
  if (strip(p, cfg, ip) != Verdict::kIp) return std::nullopt;
  return Bytes(ip.begin(), ip.end());
}

Bytes anonymize(std::span<const std::uint8_t> ip_bytes, const ReprConfig& cfg) {
  Bytes out(ip_bytes.begin(), ip_bytes.end());
  if (out.empty()) throw MalformedPacket("empty IP datagram");
  const int version = out[0] >> 4;
  if (version == 4) {
    if (out.size() < 20) throw MalformedPacket("IPv4 header truncated");
    if (cfg.anonymize_ips) std::fill(out.begin() + 12, out.begin() + 20, 0);
  } else if (version == 6) {
    if (out.size() < 40) throw MalformedPacket("IPv6 header truncated");
    if (cfg.anonymize_ips) std::fill(out.begin() + 8, out.begin() + 40, 0);
  } else {
    throw MalformedPacket("IP version nibble " + std::to_string(version) + " is neither 4 nor 6");
  }
  return out;
}

HeaderPayload split_header_payload(std::span<const std::uint8_t> b) {
  const IpInfo info = parse_ip(b);
  std::size_t header_len = info.ip_header_len;
  if (info.has_ports) {
    if (info.protocol == kProtoTCP) {
      if (info.ip_header_len + 13 > info.datagram_len) throw MalformedPacket("TCP header truncated");
      const std::size_t doff = std::size_t(b[info.ip_header_len + 12] >> 4) * 4;
      if (doff < 20) throw MalformedPacket("TCP data offset below minimum");
      header_len += doff;
    } else {
      header_len += 8;
    }
    if (header_len > info.datagram_len)
      throw MalformedPacket("declared header length " + std::to_string(header_len) + " exceeds packet length " +
                            std::to_string(info.datagram_len));
  }
  HeaderPayload hp;
  hp.header.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(header_len));
  hp.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(header_len),
                    b.begin() + static_cast<std::ptrdiff_t>(info.datagram_len));
  return hp;
}

Bytes crop_pad(std::span<const std::uint8_t> header, std::span<const std::uint8_t> payload, const ReprConfig& cfg) {
  Bytes out(cfg.packet_bytes(), 0);
  if (cfg.include_header) std::copy_n(header.begin(), std::min(header.size(), cfg.header_bytes), out.begin());
  if (cfg.include_payload)
    std::copy_n(payload.begin(), std::min(payload.size(), cfg.payload_bytes),
                out.begin() + static_cast<std::ptrdiff_t>(cfg.header_bytes));
  return out;
}

std::optional<Bytes> packet_slot(const RawPacket& p, const ReprConfig& cfg) {
  auto ip = classify_and_strip(p, cfg);
  if (!ip) return std::nullopt;
  const HeaderPayload hp = split_header_payload(anonymize(*ip, cfg));
  return crop_pad(hp.header, hp.payload, cfg);
}

StrideSample build_sample(const FlowRecord& flow, const ReprConfig& cfg) {
  cfg.validate();
  StrideSample s;
  s.stride_len = cfg.stride_len;
  s.flow_key = flow.key;
  s.label = flow.label;
  s.bytes.reserve(cfg.flow_bytes());
  std::size_t used = 0;
  for (const auto& p : flow.packets) {
    if (used == cfg.packets_per_flow) break;
    auto slot = packet_slot(p, cfg);
    if (!slot) continue;
    s.bytes.insert(s.bytes.end(), slot->begin(), slot->end());
    ++used;
  }
  if (used == 0) throw EmptyFlow("flow " + flow.key.to_string() + " has no IP packets");
  s.bytes.resize(cfg.flow_bytes(), 0);
  return s;
}

FlowAssembly assemble_flows(const std::vector<RawPacket>& packets, const ReprConfig& cfg) {
  FlowAssembly out;
  std::map<FiveTuple, std::size_t> index;
  for (const auto& p : packets) {
    try {
      std::span<const std::uint8_t> ip;
      const Verdict v = strip(p, cfg, ip);
      if (v == Verdict::kNonIp) {
        ++out.non_ip;
        continue;
      }
      if (v == Verdict::kDhcp) {
        ++out.dhcp;
        continue;
      }
      (void)split_header_payload(ip);  // reject anything build_sample could not crop
      const FiveTuple key = flow_key(ip);
      auto [it, inserted] = index.try_emplace(key, out.flows.size());
      if (inserted) out.flows.push_back(FlowRecord{key, {}, std::nullopt});
      out.flows[it->second].packets.push_back(p);
    } catch (const MalformedPacket&) {
      ++out.malformed;
    }
  }
  for (auto& f : out.flows) std::stable_sort(f.packets.begin(), f.packets.end());
  return out;
}

Bytes patch_reorder(std::span<const std::uint8_t> flow_bytes, std::size_t stride_len) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(flow_bytes.size()))));
  if (side * side != flow_bytes.size())
    throw ConfigError("patch layout needs a square flow array, got " + std::to_string(flow_bytes.size()) + " bytes");
  std::size_t ph = 1;
  for (std::size_t d = 1; d * d <= stride_len; ++d)
    if (stride_len % d == 0) ph = d;
  const std::size_t pw = stride_len / ph;
  if (side % ph != 0 || side % pw != 0)
    throw ConfigError("patch " + std::to_string(ph) + "x" + std::to_string(pw) + " does not tile a " +
                      std::to_string(side) + "x" + std::to_string(side) + " array");
  Bytes out;
  out.reserve(flow_bytes.size());
  for (std::size_t pr = 0; pr < side / ph; ++pr)
    for (std::size_t pc = 0; pc < side / pw; ++pc)
      for (std::size_t r = 0; r < ph; ++r)
        for (std::size_t c = 0; c < pw; ++c) out.push_back(flow_bytes[(pr * ph + r) * side + pc * pw + c]);
  return out;
}

}  // namespace netmamba::traffic
