// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "traffic/pcap.hpp"

namespace netmamba::traffic {

using Bytes = std::vector<std::uint8_t>;

/// Packet-to-array layout. M packets of (header_bytes + payload_bytes) bytes,
/// cut into strides of stride_len bytes.
struct ReprConfig {
  std::size_t packets_per_flow = 5;  // M
  std::size_t header_bytes = 80;     // N_h
  std::size_t payload_bytes = 240;   // N_p
  std::size_t stride_len = 4;        // L_s
  bool anonymize_ips = true;
  bool include_header = true;
  bool include_payload = true;
  bool drop_dhcp = true;

  std::size_t packet_bytes() const { return header_bytes + payload_bytes; }
  std::size_t flow_bytes() const { return packets_per_flow * packet_bytes(); }  // L_b
  std::size_t num_strides() const { return flow_bytes() / stride_len; }       // N_s
  /// Throws ConfigError on an inconsistent layout.
  void validate() const;
};

struct FiveTuple {
  std::uint8_t ip_version = 4;
  std::array<std::uint8_t, 16> ip_a{};  // v4 addresses use the first 4 bytes
  std::array<std::uint8_t, 16> ip_b{};
  std::uint16_t port_a = 0;
  std::uint16_t port_b = 0;
  std::uint8_t protocol = 0;

  auto operator<=>(const FiveTuple&) const = default;
  std::string to_string() const;
};

/// Parsed layout of an IP datagram (v4 or v6).
struct IpInfo {
  std::uint8_t version = 0;
  std::size_t ip_header_len = 0;  // includes IPv6 extension headers
  std::uint8_t protocol = 0;      // transport protocol after extension headers
  bool has_ports = false;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::size_t datagram_len = 0;   // declared length, clipped to the captured bytes
};

/// Throws MalformedPacket when the header is truncated or inconsistent.
IpInfo parse_ip(std::span<const std::uint8_t> ip_bytes);

/// Canonical key: (ip_a, port_a) <= (ip_b, port_b), so both directions agree.
FiveTuple flow_key(std::span<const std::uint8_t> ip_bytes);

/// Removes the Ethernet header and any 802.1Q/802.1ad tags. Returns nothing
/// for non-IP frames and, with drop_dhcp, for DHCP/DHCPv6 datagrams.
std::optional<Bytes> classify_and_strip(const RawPacket& p, const ReprConfig& cfg);

/// Zeroes source and destination addresses when cfg.anonymize_ips is set.
Bytes anonymize(std::span<const std::uint8_t> ip_bytes, const ReprConfig& cfg);

struct HeaderPayload {
  Bytes header;
  Bytes payload;
};

/// Header = IP header (+ IPv6 extensions) + TCP/UDP header; payload = rest of
/// the datagram.
HeaderPayload split_header_payload(std::span<const std::uint8_t> ip_bytes);

/// First header_bytes of header then first payload_bytes of payload, each
/// zero-padded; a region disabled by include_header/include_payload is zero.
Bytes crop_pad(std::span<const std::uint8_t> header, std::span<const std::uint8_t> payload, const ReprConfig& cfg);

struct FlowRecord {
  FiveTuple key;
  std::vector<RawPacket> packets;  // time-ordered, all IP
  std::optional<std::uint32_t> label;
};

struct StrideSample {
  Bytes bytes;  // L_b = num_strides * stride_len
  std::size_t stride_len = 0;
  FiveTuple flow_key;
  std::optional<std::uint32_t> label;

  std::size_t num_strides() const { return stride_len ? bytes.size() / stride_len : 0; }
  std::span<const std::uint8_t> stride(std::size_t i) const { return {bytes.data() + i * stride_len, stride_len}; }
};

/// Packet-level pipeline for one frame: strip, anonymize, split, crop/pad.
/// Returns nothing for frames filtered out by classify_and_strip.
std::optional<Bytes> packet_slot(const RawPacket& p, const ReprConfig& cfg);

StrideSample build_sample(const FlowRecord& flow, const ReprConfig& cfg);

struct FlowAssembly {
  std::vector<FlowRecord> flows;  // first-seen order
  std::size_t non_ip = 0;
  std::size_t dhcp = 0;
  std::size_t malformed = 0;
};

FlowAssembly assemble_flows(const std::vector<RawPacket>& packets, const ReprConfig& cfg);

/// Patch-splitting ablation: views the flow array as a square byte matrix and
/// re-emits it as row-major 2-D patches of stride_len bytes, so token count
/// and width are unchanged. Throws ConfigError when the array is not square or
/// the patch does not tile it.
Bytes patch_reorder(std::span<const std::uint8_t> flow_bytes, std::size_t stride_len);

}  // namespace netmamba::traffic
