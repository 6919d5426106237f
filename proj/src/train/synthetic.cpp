// SPDX-License-Identifier: Apache-2.0
#include "train/synthetic.hpp"

#include <random>

namespace netmamba::train {

namespace {

struct Signature {
  std::uint16_t server_port;
  std::uint8_t ttl_client, ttl_server;
  std::uint16_t window;
  std::uint8_t flags;
  std::size_t payload_len;
};

void be16(traffic::Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

void be32(traffic::Bytes& b, std::uint32_t v) {
  be16(b, static_cast<std::uint16_t>(v >> 16));
  be16(b, static_cast<std::uint16_t>(v));
}

Signature class_signature(std::size_t c, std::size_t max_payload) {
  // Independent of the dataset seed: a class means the same thing in every split.
  std::mt19937_64 rng(0x5eed0000ULL + c);
  std::uniform_int_distribution<int> port(1024, 49151), ttl(32, 255), win(1024, 65535), flag(0, 3);
  std::uniform_int_distribution<std::size_t> len(1, std::max<std::size_t>(1, max_payload));
  static constexpr std::uint8_t kFlags[4] = {0x18, 0x10, 0x11, 0x19};
  Signature s;
  s.server_port = static_cast<std::uint16_t>(port(rng));
  s.ttl_client = static_cast<std::uint8_t>(ttl(rng));
  s.ttl_server = static_cast<std::uint8_t>(ttl(rng));
  s.window = static_cast<std::uint16_t>(win(rng));
  s.flags = kFlags[flag(rng)];
  s.payload_len = len(rng);
  return s;
}

}  // namespace

traffic::SampleSet synthetic_dataset(const SyntheticSpec& spec) {
  spec.repr.validate();
  traffic::SampleSet set;
  set.packets_per_flow = static_cast<std::uint32_t>(spec.repr.packets_per_flow);
  set.header_bytes = static_cast<std::uint32_t>(spec.repr.header_bytes);
  set.payload_bytes = static_cast<std::uint32_t>(spec.repr.payload_bytes);
  set.stride_len = static_cast<std::uint32_t>(spec.repr.stride_len);
  set.num_classes = static_cast<std::uint32_t>(spec.num_classes);

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::uint32_t> u32;
  std::uniform_int_distribution<int> byte(0, 255), jitter(-2, 2), client_port(49152, 65535);
  traffic::Bytes flow;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const Signature sig = class_signature(c, spec.repr.payload_bytes);
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      const auto cport = static_cast<std::uint16_t>(client_port(rng));
      std::uint16_t ip_id = static_cast<std::uint16_t>(u32(rng));
      std::uint32_t seq[2] = {u32(rng), u32(rng)};
      flow.clear();
      for (std::size_t p = 0; p < spec.repr.packets_per_flow; ++p) {
        const bool from_client = p % 2 == 0;
        const long len = std::max<long>(0, long(sig.payload_len) + jitter(rng));
        traffic::Bytes pkt;
        pkt.push_back(0x45);
        pkt.push_back(0);
        be16(pkt, static_cast<std::uint16_t>(40 + len));
        be16(pkt, ip_id++);
        be16(pkt, 0x4000);
        pkt.push_back(from_client ? sig.ttl_client : sig.ttl_server);
        pkt.push_back(6);
        be16(pkt, 0);                   // checksum
        pkt.insert(pkt.end(), 8, 0);    // anonymized addresses
        be16(pkt, from_client ? cport : sig.server_port);
        be16(pkt, from_client ? sig.server_port : cport);
        be32(pkt, seq[from_client ? 0 : 1]);
        be32(pkt, seq[from_client ? 1 : 0]);
        pkt.push_back(0x50);
        pkt.push_back(sig.flags);
        be16(pkt, sig.window);
        be16(pkt, 0);
        be16(pkt, 0);
        for (long i = 0; i < len; ++i) pkt.push_back(static_cast<std::uint8_t>(byte(rng)));
        seq[from_client ? 0 : 1] += static_cast<std::uint32_t>(len);
        const auto hp = traffic::split_header_payload(pkt);
        const auto slot = traffic::crop_pad(hp.header, hp.payload, spec.repr);
        flow.insert(flow.end(), slot.begin(), slot.end());
      }
      set.append(flow.data(), spec.labeled ? static_cast<std::uint32_t>(c) : traffic::kUnlabeled);
    }
  }
  return set;
}

}  // namespace netmamba::train
