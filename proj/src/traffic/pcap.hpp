// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace netmamba::traffic {

/// One captured frame, link layer onward.
struct RawPacket {
  std::uint64_t ts_sec = 0;
  std::uint32_t ts_nsec = 0;  // always nanoseconds, whatever the file resolution
  std::vector<std::uint8_t> link_bytes;
  std::uint32_t orig_len = 0;

  double timestamp() const { return double(ts_sec) + double(ts_nsec) * 1e-9; }
  bool operator<(const RawPacket& o) const { return ts_sec != o.ts_sec ? ts_sec < o.ts_sec : ts_nsec < o.ts_nsec; }
};

constexpr std::uint32_t kLinkTypeEthernet = 1;

/// Classic libpcap format only. Accepts the four magic values
/// (micro/nanosecond, either byte order); rejects non-Ethernet link types.
std::vector<RawPacket> parse_capture(const std::filesystem::path& path);
std::vector<RawPacket> parse_capture(std::span<const std::uint8_t> bytes);

/// Little-endian microsecond (or nanosecond) writer, used for fixtures and tools.
std::vector<std::uint8_t> write_capture(const std::vector<RawPacket>& packets, bool nanosecond = false,
                                        std::uint32_t link_type = kLinkTypeEthernet, std::uint32_t snaplen = 65535);

}  // namespace netmamba::traffic
