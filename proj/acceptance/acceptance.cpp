// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments pick
// a subset, e.g. `netmamba_acceptance 1 4 9`.
#include <algorithm>
#include <array>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "autodiff/ops.hpp"
#include "gradcheck.hpp"
#include "model/checkpoint.hpp"
#include "model/model.hpp"
#include "ssm/block.hpp"
#include "ssm/scan.hpp"
#include "ssm_oracles.hpp"
#include "traffic/dataset.hpp"
#include "traffic/extract.hpp"
#include "train/bench.hpp"
#include "train/metrics.hpp"
#include "train/synthetic.hpp"
#include "train/trainer.hpp"

using namespace netmamba;
using namespace netmamba::testing;
using Bytes = std::vector<std::uint8_t>;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("nm_accept_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- 1
Verdict ssm_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0;
  const int instances = 60;
  for (int i = 0; i < instances; ++i) {
    const std::size_t B = 1 + rng() % 3, L = 1 + rng() % 32, E = 1 + rng() % 6, N = 1 + rng() % 8;
    const auto inst = random_time_invariant(rng, B, L, E, N);
    const auto scan = ssm::selective_scan(inst.a_bar, inst.b_bar, inst.c, inst.x);
    const auto conv = ssm::ssm_conv_oracle(inst.a_bar, inst.b_bar, inst.c, inst.x);
    const auto direct = direct_sum(inst.a_bar, inst.b_bar, inst.c, inst.x);
    worst = std::max({worst, max_abs_diff(scan, conv), max_abs_diff(scan, direct)});
  }
  const double t = seconds_since(t0);
  return {worst < 1e-10 && t < 5.0,
          fmt("max abs err %.2e over %d time-invariant instances (limit 1e-10), %.2f s (limit 5 s)", worst, instances, t)};
}

// ---------------------------------------------------------------- 2
struct GradCase {
  const char* name;
  std::function<Var<double>()> loss;
  std::vector<Var<double>> params;
};

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  std::vector<GradCase> cases;
  auto rp = [&](ad::Shape s, double lo = -1, double hi = 1) { return random_param(s, rng, lo, hi); };
  auto rt = [&](ad::Shape s) { return random_tensor(s, rng); };

  {
    auto a = rp({2, 3, 4}), w = rp({4, 5});
    auto wt = rt({2, 3, 5});
    cases.push_back({"matmul", [=] { return project(ad::matmul(a, w), wt); }, {a, w}});
  }
  {
    auto a = rp({2, 3, 4}), b = rp({3, 4});
    auto wt = rt({2, 3, 4});
    cases.push_back({"add", [=] { return project(ad::add(a, b), wt); }, {a, b}});
    cases.push_back({"sub", [=] { return project(ad::sub(a, b), wt); }, {a, b}});
    cases.push_back({"mul", [=] { return project(ad::mul(a, b), wt); }, {a, b}});
  }
  {
    auto a = rp({7}, -3, 3);
    auto wt = rt({7});
    cases.push_back({"scale", [=] { return project(ad::scale(a, 1.7), wt); }, {a}});
    cases.push_back({"neg", [=] { return project(ad::neg(a), wt); }, {a}});
    cases.push_back({"exp", [=] { return project(ad::exp(a), wt); }, {a}});
    cases.push_back({"silu", [=] { return project(ad::silu(a), wt); }, {a}});
    cases.push_back({"softplus", [=] { return project(ad::softplus(a), wt); }, {a}});
  }
  {
    auto x = rp({3, 6}), g = rp({6}, 0.5, 1.5), b = rp({6});
    auto wt = rt({3, 6});
    cases.push_back({"rmsnorm", [=] { return project(ad::rmsnorm(x, g, 1e-5), wt); }, {x, g}});
    cases.push_back({"layernorm", [=] { return project(ad::layernorm(x, g, b, 1e-5), wt); }, {x, g, b}});
  }
  {
    auto x = rp({2, 6, 3}), k = rp({3, 4}), b = rp({3});
    auto wt = rt({2, 6, 3});
    cases.push_back({"causal_conv1d", [=] { return project(ad::causal_conv1d(x, k, b), wt); }, {x, k, b}});
  }
  {
    auto x = rp({2, 5, 3}), y = rp({2, 2, 3});
    auto w1 = rt({2, 2, 3}), w2 = rt({2, 7, 3}), w3 = rt({3, 2, 5}), w4 = rt({10, 3}), w5 = rt({2, 3, 3});
    cases.push_back({"slice", [=] { return project(ad::slice(x, 1, 2, 2), w1); }, {x}});
    cases.push_back({"concat", [=] { return project(ad::concat<double>({x, y}, 1), w2); }, {x, y}});
    cases.push_back({"permute", [=] { return project(ad::permute(x, {2, 0, 1}), w3); }, {x}});
    cases.push_back({"reshape", [=] { return project(ad::reshape(x, {10, 3}), w4); }, {x}});
    const std::vector<std::size_t> rows{4, 0, 2, 1, 1, 3};
    cases.push_back({"gather_rows", [=] { return project(ad::gather_rows(x, rows, 3), w5); }, {x}});
  }
  {
    auto v = rp({3});
    auto wt = rt({2, 4, 3});
    cases.push_back({"expand", [=] { return project(ad::expand(v, {2, 4}), wt); }, {v}});
  }
  {
    auto x = rp({2, 3, 4});
    auto w1 = rt({2, 4}), w2 = rt({2, 3});
    cases.push_back({"sum", [=] { return ad::sum(x); }, {x}});
    cases.push_back({"mean", [=] { return ad::mean(x); }, {x}});
    cases.push_back({"sum_axis", [=] { return project(ad::sum_axis(x, 1), w1); }, {x}});
    cases.push_back({"mean_axis", [=] { return project(ad::mean_axis(x, 2), w2); }, {x}});
  }
  {
    auto z = rp({4, 5}, -2, 2);
    cases.push_back({"softmax_cross_entropy", [=] { return ad::softmax_cross_entropy(z, {0, 4, 2, 2}); }, {z}});
    auto p = rp({4, 3}), t = rp({4, 3});
    ad::Tensor<double> mask({4, 3});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 0.0 : 1.0;
    cases.push_back({"mse", [=] { return ad::mse(p, t, &mask); }, {p, t}});
  }
  {
    auto delta = rp({2, 5, 3}, 0.05, 1.0), A = rp({3, 4}, -2.0, -0.2), Bm = rp({2, 5, 4}), C = rp({2, 5, 4}),
         x = rp({2, 5, 3});
    auto wt = rt({2, 5, 3});
    cases.push_back({"selective_scan", [=] { return project(ssm::selective_scan_fused(delta, A, Bm, C, x), wt); },
                     {delta, A, Bm, C, x}});
  }

  double worst_prim = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    const auto r = grad_check(c.loss, c.params, 1e-4);
    if (worst_name.empty() || r.max_rel_error > worst_prim) {
      worst_prim = r.max_rel_error;
      worst_name = c.name;
    }
  }

  // Composed block, B=2, L=8, D=8, E=16, N=4, at a random evaluation point.
  ssm::SSMDims dims;
  dims.d_model = 8;
  dims.d_inner = 16;
  dims.d_state = 4;
  dims.dt_rank = 4;
  auto p = ssm::MambaBlockParams<double>::init(dims, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : p.dt_bias.mutable_value().data) v = u(rng);
  for (auto& v : p.out.mutable_value().data) v *= 4.0;
  for (auto& v : p.norm_gain.mutable_value().data) v += 0.5 * u(rng);
  auto x = rp({2, 8, 8});
  auto wt = rt({2, 8, 8});
  std::vector<Var<double>> leaves;
  for (auto& [n, v] : p.named("")) leaves.push_back(v);
  leaves.push_back(x);
  const auto block = grad_check([&] { return project(ssm::block_forward(x, p), wt); }, leaves, 1e-4);

  const double t = seconds_since(t0);
  return {worst_prim < 1e-6 && block.max_rel_error < 1e-3 && t < 60.0,
          fmt("%zu primitives worst rel err %.2e (%s, limit 1e-6); block rel err %.2e (limit 1e-3); %.1f s (limit 60 s)",
              cases.size(), worst_prim, worst_name.c_str(), block.max_rel_error, t)};
}

// ---------------------------------------------------------------- 3
Verdict causality() {
  model::ModelConfig cfg;  // default dims: 4 encoder blocks, D=256
  if (cfg.depth_enc != 4) return {false, "default encoder depth is not 4"};
  model::NetMamba<float> net(cfg, 31);
  ad::NoGradGuard no_grad;
  std::mt19937_64 rng(5);
  const std::size_t L = 96, D = cfg.d_enc;
  const auto base = random_tensor<float>({1, L, D}, rng);
  const auto y0 = net.encode(Var<float>::constant(base)).value();
  std::size_t violations = 0, unchanged_at_t = 0;
  const int probes = 20;
  for (int i = 0; i < probes; ++i) {
    const std::size_t t = 1 + rng() % (L - 1);
    auto x = base;
    for (std::size_t d = 0; d < D; ++d) x[t * D + d] += 0.5f;
    const auto y = net.encode(Var<float>::constant(x)).value();
    if (std::memcmp(y.data.data(), y0.data.data(), t * D * sizeof(float)) != 0) ++violations;
    bool changed = false;
    for (std::size_t d = 0; d < D; ++d) changed |= y[t * D + d] != y0[t * D + d];
    unchanged_at_t += !changed;
  }
  return {violations == 0 && unchanged_at_t == 0,
          fmt("%d probes on a %zu-block encoder: %zu with earlier rows changed, %zu with row t unaffected",
              probes, cfg.depth_enc, violations, unchanged_at_t)};
}

// ---------------------------------------------------------------- 4
// Hand-built frames and the sample bytes expected for them.
void be16(Bytes& b, std::uint16_t v) {
  b.push_back(std::uint8_t(v >> 8));
  b.push_back(std::uint8_t(v));
}

void le32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
}

Bytes pattern(std::size_t n, std::uint8_t seed) {
  Bytes b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = std::uint8_t(seed + 7 * i);
  return b;
}

struct Datagram {
  Bytes bytes;
  std::size_t header_len;  // IP + transport header
};

Datagram ipv4_datagram(std::array<std::uint8_t, 4> src, std::array<std::uint8_t, 4> dst, std::uint8_t proto,
                       std::uint16_t sport, std::uint16_t dport, const Bytes& payload, std::size_t ip_opts_words = 0,
                       std::size_t tcp_opts_words = 0) {
  Bytes l4;
  be16(l4, sport);
  be16(l4, dport);
  if (proto == 6) {
    for (int i = 0; i < 8; ++i) l4.push_back(std::uint8_t(0x31 + i));
    l4.push_back(std::uint8_t((5 + tcp_opts_words) << 4));
    l4.push_back(0x18);
    be16(l4, 502);
    be16(l4, 0xBEEF);
    be16(l4, 0);
    for (std::size_t i = 0; i < 4 * tcp_opts_words; ++i) l4.push_back(0x01);
  } else {
    be16(l4, std::uint16_t(8 + payload.size()));
    be16(l4, 0xCAFE);
  }
  const std::size_t ihl = 5 + ip_opts_words;
  Bytes ip;
  ip.push_back(std::uint8_t(0x40 | ihl));
  ip.push_back(0x00);
  be16(ip, std::uint16_t(4 * ihl + l4.size() + payload.size()));
  be16(ip, 0x4242);
  be16(ip, 0x4000);
  ip.push_back(57);
  ip.push_back(proto);
  be16(ip, 0x1D1D);
  ip.insert(ip.end(), src.begin(), src.end());
  ip.insert(ip.end(), dst.begin(), dst.end());
  for (std::size_t i = 0; i < 4 * ip_opts_words; ++i) ip.push_back(0x01);
  const std::size_t header_len = ip.size() + l4.size();
  ip.insert(ip.end(), l4.begin(), l4.end());
  ip.insert(ip.end(), payload.begin(), payload.end());
  return {ip, header_len};
}

Bytes ether(std::uint16_t ethertype, const Bytes& body, bool vlan = false) {
  Bytes f{0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xAA, 0xBB};
  if (vlan) {
    be16(f, 0x8100);
    be16(f, 0x0064);
  }
  be16(f, ethertype);
  f.insert(f.end(), body.begin(), body.end());
  while (f.size() < 60) f.push_back(0);  // minimum frame length padding
  return f;
}

Bytes arp_frame() {
  Bytes body{0x00, 0x01, 0x08, 0x00, 0x06, 0x04, 0x00, 0x01};
  for (int i = 0; i < 20; ++i) body.push_back(std::uint8_t(0xE0 + i));
  return ether(0x0806, body);
}

Bytes pcap_file(const std::vector<Bytes>& frames) {
  Bytes f;
  le32(f, 0xa1b2c3d4);
  f.push_back(2), f.push_back(0), f.push_back(4), f.push_back(0);
  le32(f, 0);
  le32(f, 0);
  le32(f, 65535);
  le32(f, 1);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    le32(f, std::uint32_t(1700000000 + i));
    le32(f, 0);
    le32(f, std::uint32_t(frames[i].size()));
    le32(f, std::uint32_t(frames[i].size()));
    f.insert(f.end(), frames[i].begin(), frames[i].end());
  }
  return f;
}

/// Expected 320-byte slot: addresses zeroed, header and payload regions
/// cropped or zero-padded to 80 and 240 bytes.
Bytes expected_slot(const Datagram& d) {
  Bytes ip = d.bytes;
  std::fill(ip.begin() + 12, ip.begin() + 20, 0);
  Bytes slot(320, 0);
  std::copy_n(ip.begin(), std::min<std::size_t>(d.header_len, 80), slot.begin());
  const std::size_t payload = ip.size() - d.header_len;
  std::copy_n(ip.begin() + std::ptrdiff_t(d.header_len), std::min<std::size_t>(payload, 240), slot.begin() + 80);
  return slot;
}

void write_bytes(const std::filesystem::path& p, const Bytes& b) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

Bytes read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Bytes nmstride_header(std::uint32_t classes, std::uint32_t count) {
  Bytes h{'N', 'M', 'S', 'T', 'R', 'I', 'D', 'E', 0x01, 0x00};
  for (std::uint32_t v : {5u, 80u, 240u, 4u, classes, count}) le32(h, v);
  return h;
}

Verdict golden_files() {
  const auto dir = scratch_dir("golden");
  const std::array<std::uint8_t, 4> client{192, 168, 1, 10}, server{93, 184, 216, 34};
  Bytes expected_train = nmstride_header(3, 3);
  auto add_sample = [&](std::uint32_t label, const std::vector<Datagram>& kept) {
    le32(expected_train, label);
    Bytes sample(1600, 0);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto slot = expected_slot(kept[i]);
      std::copy(slot.begin(), slot.end(), sample.begin() + std::ptrdiff_t(320 * i));
    }
    expected_train.insert(expected_train.end(), sample.begin(), sample.end());
  };

  // Class 0: IPv4/TCP, six packets in both directions (first five kept), a
  // 300-byte payload cropped to 240, TCP options, and an interleaved ARP frame.
  std::vector<Datagram> tcp{
      ipv4_datagram(client, server, 6, 51000, 443, {}),
      ipv4_datagram(server, client, 6, 443, 51000, {}, 0, 3),
      ipv4_datagram(client, server, 6, 51000, 443, pattern(300, 0x10)),
      ipv4_datagram(server, client, 6, 443, 51000, pattern(17, 0x80)),
      ipv4_datagram(client, server, 6, 51000, 443, pattern(5, 0x33)),
      ipv4_datagram(client, server, 6, 51000, 443, pattern(40, 0x55)),
  };
  std::vector<Bytes> frames;
  for (std::size_t i = 0; i < tcp.size(); ++i) {
    frames.push_back(ether(0x0800, tcp[i].bytes));
    if (i == 1) frames.push_back(arp_frame());
  }
  write_bytes(dir / "in" / "a_tcp" / "flow.pcap", pcap_file(frames));
  add_sample(0, {tcp.begin(), tcp.begin() + 5});

  // Class 1: IPv4/UDP, two short datagrams inside padded 60-byte frames; the
  // remaining three slots stay zero.
  std::vector<Datagram> udp{ipv4_datagram(client, server, 17, 5353, 53, pattern(6, 0xA0)),
                            ipv4_datagram(server, client, 17, 53, 5353, pattern(3, 0xC0))};
  write_bytes(dir / "in" / "b_udp" / "flow.pcap", pcap_file({ether(0x0800, udp[0].bytes), ether(0x0800, udp[1].bytes)}));
  add_sample(1, udp);

  // Class 2: 802.1Q-tagged IPv4/TCP with IP options.
  std::vector<Datagram> vlan{ipv4_datagram(client, server, 6, 40000, 8443, pattern(120, 0x05), 1),
                             ipv4_datagram(server, client, 6, 8443, 40000, pattern(260, 0x90), 1)};
  write_bytes(dir / "in" / "c_vlan" / "flow.pcap",
              pcap_file({ether(0x0800, vlan[0].bytes, true), arp_frame(), ether(0x0800, vlan[1].bytes, true)}));
  add_sample(2, vlan);

  // A class whose capture holds only ARP: contributes no sample and no label.
  write_bytes(dir / "in" / "d_arp" / "flow.pcap", pcap_file({arp_frame(), arp_frame()}));

  traffic::ExtractOptions opts;
  opts.input = dir / "in";
  opts.output = dir / "out";
  opts.seed = 1;
  std::string problem;
  try {
    const auto summary = traffic::extract_directory(opts);
    if (summary.non_ip != 4) problem += fmt(" non-IP count %zu (expected 4);", summary.non_ip);
    if (summary.class_names != std::vector<std::string>{"a_tcp", "b_udp", "c_vlan"}) problem += " class list differs;";
    if (read_bytes(dir / "out" / "train.nmstride") != expected_train) problem += " train.nmstride differs;";
    if (read_bytes(dir / "out" / "val.nmstride") != nmstride_header(3, 0)) problem += " val.nmstride differs;";
  } catch (const std::exception& e) {
    problem += std::string(" extraction failed: ") + e.what();
  }
  std::filesystem::remove_all(dir);

  // Default layout constants.
  const traffic::ReprConfig repr;
  const model::ModelConfig mc;
  const bool layout = repr.flow_bytes() == 1600 && repr.num_strides() == 400 && mc.seq_len() == 401 &&
                      mc.visible_len() == 41;
  if (!layout)
    problem += fmt(" layout L_b=%zu N_s=%zu L=%zu L_vis=%zu;", repr.flow_bytes(), repr.num_strides(), mc.seq_len(),
                   mc.visible_len());
  return {problem.empty(),
          problem.empty() ? fmt("TCP/UDP/VLAN/ARP/short-flow captures byte-exact (%zu bytes); L_b=1600 N_s=400 L=401 L_vis=41",
                                expected_train.size())
                          : "mismatch:" + problem};
}

// ---------------------------------------------------------------- 5
Verdict masking_statistics() {
  const std::size_t L = 401;
  const int plans = 1000;
  std::mt19937_64 rng(99);
  std::vector<int> visible(L - 1, 0);
  int cls_visible = 0;
  for (int i = 0; i < plans; ++i) {
    const auto plan = model::make_mask(L, 0.9, rng);
    // The class token is index N_s: never part of the masked set.
    cls_visible += std::find(plan.masked.begin(), plan.masked.end(), L - 1) == plan.masked.end() &&
                   plan.visible.size() + 1 == model::visible_len(L, 0.9);
    for (auto v : plan.visible) ++visible[v];
  }
  double lo = 1, hi = 0;
  for (int v : visible) {
    lo = std::min(lo, double(v) / plans);
    hi = std::max(hi, double(v) / plans);
  }
  const bool pass = cls_visible == plans && lo >= 0.05 && hi <= 0.15;
  return {pass, fmt("class token visible %d/%d; per-stride visibility in [%.3f, %.3f] (target 0.10 +/- 0.05)",
                    cls_visible, plans, lo, hi)};
}

// ---------------------------------------------------------------- 6
Verdict parameter_counts() {
  model::ModelConfig cfg;
  const auto pre = model::count_parameters(cfg).pretrain;
  cfg.num_classes = 20;
  const auto fine = model::count_parameters(cfg).finetune;
  model::NetMamba<float> net(cfg, 0);
  std::size_t inst_pre = 0, inst_fine = 0;
  for (const auto& [n, v] : net.pretrain_parameters()) inst_pre += v.size();
  for (const auto& [n, v] : net.finetune_parameters()) inst_fine += v.size();
  const bool pass = pre >= 1870000 && pre <= 2530000 && fine >= 1620000 && fine <= 2190000 && inst_pre == pre &&
                    inst_fine == fine;
  return {pass, fmt("pre-train %zu (2.2 M +/- 15%%), fine-tune %zu at C=20 (1.9 M +/- 15%%), instantiated %zu / %zu",
                    pre, fine, inst_pre, inst_fine)};
}

// ---------------------------------------------------------------- 7
traffic::ReprConfig desk_repr() {
  traffic::ReprConfig r;
  r.packets_per_flow = 4;
  r.header_bytes = 40;
  r.payload_bytes = 24;
  r.stride_len = 4;
  return r;
}

model::ModelConfig desk_model() {
  model::ModelConfig c;
  c.stride_len = 4;
  c.num_strides = desk_repr().num_strides();
  c.d_enc = 32;
  c.e_enc = 64;
  c.depth_enc = 2;
  c.d_dec = 16;
  c.e_dec = 32;
  c.num_classes = 10;
  return c;
}

traffic::SampleSet desk_data(bool labeled, std::uint64_t seed) {
  train::SyntheticSpec s;
  s.num_classes = 10;
  s.per_class = 200;
  s.repr = desk_repr();
  s.seed = seed;
  s.labeled = labeled;
  return train::synthetic_dataset(s);
}

double finetune_accuracy(const model::CheckpointFile* init, const traffic::SampleSet& tr, const traffic::SampleSet& va,
                         const traffic::SampleSet& te, std::size_t* best_epoch) {
  model::NetMamba<float> net(desk_model(), 1);
  if (init) net.load(*init, net.encoder_parameters());
  train::FinetuneOptions fo;
  fo.epochs = 60;
  fo.seed = 5;
  fo.patience = 10;
  const auto r = train::finetune(net, tr, va, te, fo);
  if (best_epoch) *best_epoch = r.best_epoch;
  return r.test.accuracy;
}

Verdict desk_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto unlabeled = desk_data(false, 1);
  model::NetMamba<float> net(desk_model(), 1);
  train::PretrainOptions po;
  po.batch = 32;
  po.steps = 500;
  po.seed = 3;
  po.log_every = 50;
  const auto pr = train::pretrain(net, unlabeled, po);
  double first = 0;
  for (int i = 0; i < 20; ++i) first += pr.per_step[i].loss / 20;
  const double last = pr.log.back().loss;
  const double drop = 1.0 - last / first;
  model::CheckpointFile pretrained;
  net.store(pretrained);

  const auto labeled = desk_data(true, 2);
  const auto split = traffic::split_indices(labeled.labels, {}, 4);
  const auto tr = labeled.select(split.train), va = labeled.select(split.val), te = labeled.select(split.test);
  std::size_t best_epoch = 0;
  const double acc = finetune_accuracy(&pretrained, tr, va, te, &best_epoch);

  // Few-shot direction: the first 10% of each class in the training split.
  std::vector<std::size_t> per_class(10, 0), seen(10, 0), few;
  for (auto l : tr.labels) ++per_class[l];
  for (std::size_t i = 0; i < tr.size(); ++i)
    if (seen[tr.labels[i]]++ < per_class[tr.labels[i]] / 10) few.push_back(i);
  const auto tr10 = tr.select(few);
  const double acc_pre10 = finetune_accuracy(&pretrained, tr10, va, te, nullptr);
  const double acc_scratch10 = finetune_accuracy(nullptr, tr10, va, te, nullptr);

  const double t = seconds_since(t0);
  const bool pass = drop >= 0.5 && acc >= 0.95 && acc_pre10 >= acc_scratch10 && t < 900;
  return {pass, fmt("masked-MSE %.4f -> %.4f (drop %.0f%%, need >= 50%%); test acc %.3f at best epoch %zu (need >= 0.95); "
                    "10%% data: pre-trained %.3f vs scratch %.3f; %.0f s (limit 900 s)",
                    first, last, 100 * drop, acc, best_epoch, acc_pre10, acc_scratch10, t)};
}

// ---------------------------------------------------------------- 8
Verdict linear_scaling() {
  model::ModelConfig cfg;  // default encoder dims
  model::NetMamba<float> net(cfg, 8);
  train::BenchOptions bo;
  bo.batches = {4};
  bo.lengths = {400, 800, 1600};
  bo.repeats = 5;
  bo.warmup = 1;
  const auto rows = train::bench(net, bo);
  std::vector<double> lengths, secs;
  std::string cells;
  for (const auto& r : rows) {
    lengths.push_back(double(r.seq_len));
    secs.push_back(r.median_seconds);
    cells += fmt(" L=%zu:%.3fs", r.seq_len, r.median_seconds);
  }
  const double k = train::scaling_exponent(lengths, secs);
  return {k <= 1.3, fmt("log-log exponent %.3f (limit 1.3) at batch 4;%s", k, cells.c_str())};
}

// ---------------------------------------------------------------- 9
Verdict metric_oracle() {
  std::mt19937_64 rng(9);
  int mismatches = 0;
  const int matrices = 100;
  for (int m = 0; m < matrices; ++m) {
    const std::size_t C = 2 + rng() % 7;
    std::vector<std::size_t> labels, preds;
    for (std::size_t t = 0; t < C; ++t)
      for (std::size_t p = 0; p < C; ++p) {
        const std::size_t n = (rng() % 4 == 0) ? 0 : rng() % 12;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(t), preds.push_back(p);
      }
    if (labels.empty()) labels.push_back(0), preds.push_back(1);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> l2, p2;
    for (auto i : order) l2.push_back(labels[i]), p2.push_back(preds[i]);

    const auto r = train::compute_metrics(l2, p2, C);

    // Per-sample loop: counts by scanning every sample once per class.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < l2.size(); ++i) correct += l2[i] == p2[i];
    const double n = double(l2.size());
    double wp = 0, wr = 0, wf = 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < l2.size(); ++i) {
        tp += l2[i] == c && p2[i] == c;
        fp += l2[i] != c && p2[i] == c;
        fn += l2[i] == c && p2[i] != c;
      }
      const double prec = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
      const double rec = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
      const double f1 = prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
      const double w = double(tp + fn) / n;
      wp += w * prec;
      wr += w * rec;
      wf += w * f1;
    }
    const double acc = double(correct) / n;
    mismatches += !(r.accuracy == acc && r.precision == wp && r.recall == wr && r.f1 == wf);
  }
  return {mismatches == 0, fmt("%d/%d random confusion matrices match the per-sample loop exactly", matrices - mismatches,
                               matrices)};
}

// ---------------------------------------------------------------- 10
model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.stride_len = 4;
  c.num_strides = 24;
  c.d_enc = 16;
  c.e_enc = 32;
  c.depth_enc = 2;
  c.d_dec = 8;
  c.e_dec = 16;
  c.depth_dec = 1;
  c.d_state = 4;
  c.dt_rank = 4;
  c.mask_ratio = 0.75;
  c.num_classes = 3;
  return c;
}

Verdict checkpoint_round_trip() {
  const auto dir = scratch_dir("ckpt");
  train::SyntheticSpec s;
  s.num_classes = 3;
  s.per_class = 12;
  s.repr.packets_per_flow = 2;
  s.repr.header_bytes = 40;
  s.repr.payload_bytes = 8;
  s.seed = 4;
  const auto data = train::synthetic_dataset(s);
  std::string problem;

  // save -> load -> evaluate against the in-memory model.
  model::NetMamba<float> net(tiny_model(), 12);
  model::CheckpointFile ck;
  net.store(ck);
  model::save_checkpoint(dir / "model.ckpt", ck);
  const auto loaded_ck = model::load_checkpoint(dir / "model.ckpt");
  model::NetMamba<float> loaded(model::config_from_json(loaded_ck.meta.at("config")), 999);
  loaded.load(loaded_ck);
  std::vector<const std::uint8_t*> ptrs;
  for (std::size_t i = 0; i < data.size(); ++i) ptrs.push_back(data.sample(i));
  {
    ad::NoGradGuard no_grad;
    const auto x = Var<float>::constant(model::strides_tensor<float>(ptrs, net.config()));
    const auto a = net.finetune_forward(x).value(), b = loaded.finetune_forward(x).value();
    if (a.data.size() != b.data.size() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) != 0)
      problem += " logits differ after reload;";
  }
  const auto ea = train::evaluate(net, data, 5), eb = train::evaluate(loaded, data, 5);
  if (ea.predictions != eb.predictions || train::to_json(ea.metrics) != train::to_json(eb.metrics))
    problem += " evaluation differs after reload;";

  // Interrupted at step 6 through a checkpoint file, resumed to step 12.
  train::PretrainOptions po;
  po.batch = 6;
  po.steps = 12;
  po.seed = 17;
  po.log_every = 3;
  model::NetMamba<float> straight(tiny_model(), 3);
  const auto full = train::pretrain(straight, data, po);
  model::NetMamba<float> first(tiny_model(), 3);
  po.stop_after = 6;
  po.out_dir = dir / "run";
  const auto part1 = train::pretrain(first, data, po);
  const auto resume = model::load_checkpoint(dir / "run" / "pretrain_last.ckpt");
  model::NetMamba<float> second(tiny_model(), 4242);
  second.load(resume);
  po.stop_after = 0;
  po.out_dir.clear();
  const auto part2 = train::pretrain(second, data, po, &resume);
  std::size_t same_steps = 0;
  for (std::size_t i = 0; i < part1.per_step.size(); ++i) same_steps += part1.per_step[i].loss == full.per_step[i].loss;
  for (std::size_t i = 0; i < part2.per_step.size(); ++i)
    same_steps += part2.per_step[i].loss == full.per_step[part1.per_step.size() + i].loss;
  if (same_steps != 12 || part1.per_step.size() + part2.per_step.size() != 12)
    problem += fmt(" %zu/12 resumed steps bit-identical;", same_steps);
  const auto pa = straight.parameters(), pb = second.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (std::memcmp(pa[i].second.data().data(), pb[i].second.data().data(), pa[i].second.size() * sizeof(float)) != 0) {
      problem += " final parameter " + pa[i].first + " differs;";
      break;
    }
  std::filesystem::remove_all(dir);
  return {problem.empty(), problem.empty()
                               ? "reloaded logits, predictions and metrics bit-identical; 12/12 resumed steps and final "
                                 "parameters bit-identical"
                               : "mismatch:" + problem};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"SSM oracle equivalence", ssm_oracles},
      {"Gradient suite", gradient_suite},
      {"Causality", causality},
      {"Representation golden files", golden_files},
      {"Masking statistics", masking_statistics},
      {"Parameter counts", parameter_counts},
      {"Desk-scale learning", desk_learning},
      {"Linear-time scaling", linear_scaling},
      {"Metric oracle", metric_oracle},
      {"Checkpoint round trip", checkpoint_round_trip},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d. %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
