// SPDX-License-Identifier: Apache-2.0
#include "config/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "errors.hpp"

namespace netmamba::config {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v, std::uint64_t min) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size())
    throw ConfigError(key + " expects a non-negative integer, got '" + v + "'");
  if (out < min) throw ConfigError(key + " must be at least " + std::to_string(min) + ", got " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + " expects a finite number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + " expects true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_uint(key, trim(item), 1));
  if (out.empty()) throw ConfigError(key + " expects a comma-separated list of positive integers");
  return out;
}

std::string fmt_double(double d) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d, std::chars_format::general);
  return std::string(buf, end);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename F>
Entry uint_entry(const std::string& key, F field, std::uint64_t min = 0) {
  return {key, [=](RunConfig& c, const std::string& v) { field(c) = parse_uint(key, v, min); },
          [=](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <typename F>
Entry double_entry(const std::string& key, F field) {
  return {key, [=](RunConfig& c, const std::string& v) { field(c) = parse_double(key, v); },
          [=](const RunConfig& c) { return fmt_double(field(c)); }};
}

template <typename F>
Entry bool_entry(const std::string& key, F field) {
  return {key, [=](RunConfig& c, const std::string& v) { field(c) = parse_bool(key, v); },
          [=](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); }};
}

template <typename F>
Entry list_entry(const std::string& key, F field) {
  return {key, [=](RunConfig& c, const std::string& v) { field(c) = parse_list(key, v); },
          [=](const RunConfig& c) { return fmt_list(field(c)); }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> t;
    t.push_back(uint_entry("repr.packets_per_flow", FIELD(repr.packets_per_flow), 1));
    t.push_back(uint_entry("repr.header_bytes", FIELD(repr.header_bytes)));
    t.push_back(uint_entry("repr.payload_bytes", FIELD(repr.payload_bytes)));
    t.push_back(uint_entry("repr.stride_len", FIELD(repr.stride_len), 1));
    t.push_back(bool_entry("repr.anonymize_ips", FIELD(repr.anonymize_ips)));
    t.push_back(bool_entry("repr.include_header", FIELD(repr.include_header)));
    t.push_back(bool_entry("repr.include_payload", FIELD(repr.include_payload)));
    t.push_back(bool_entry("repr.drop_dhcp", FIELD(repr.drop_dhcp)));

    t.push_back(uint_entry("extract.min_packets", FIELD(min_packets), 1));
    t.push_back(uint_entry("extract.limit_lower", FIELD(limit_lower)));
    t.push_back(uint_entry("extract.limit_upper", FIELD(limit_upper)));
    t.push_back(double_entry("extract.train_ratio", FIELD(ratios.train)));
    t.push_back(double_entry("extract.val_ratio", FIELD(ratios.val)));
    t.push_back(double_entry("extract.test_ratio", FIELD(ratios.test)));

    t.push_back(uint_entry("model.d_enc", FIELD(model.d_enc), 1));
    t.push_back(uint_entry("model.e_enc", FIELD(model.e_enc), 1));
    t.push_back(uint_entry("model.depth_enc", FIELD(model.depth_enc), 1));
    t.push_back(uint_entry("model.d_dec", FIELD(model.d_dec), 1));
    t.push_back(uint_entry("model.e_dec", FIELD(model.e_dec), 1));
    t.push_back(uint_entry("model.depth_dec", FIELD(model.depth_dec)));
    t.push_back(uint_entry("model.d_state", FIELD(model.d_state), 1));
    t.push_back(uint_entry("model.dt_rank", FIELD(model.dt_rank), 1));
    t.push_back(uint_entry("model.conv_kernel", FIELD(model.conv_kernel), 1));
    t.push_back(double_entry("model.mask_ratio", FIELD(model.mask_ratio)));
    t.push_back(bool_entry("model.use_pos_embed", FIELD(model.use_pos_embed)));
    t.push_back(bool_entry("model.patch_split", FIELD(model.patch_split)));
    t.push_back(bool_entry("model.ssm_skip", FIELD(model.ssm_skip)));
    t.push_back({"model.norm",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "rms") c.model.norm = ssm::NormKind::kRms;
                   else if (v == "layer") c.model.norm = ssm::NormKind::kLayer;
                   else throw ConfigError("model.norm expects rms or layer, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.model.norm == ssm::NormKind::kLayer ? "layer" : "rms"); }});
    t.push_back({"model.recon_target",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "raw") c.model.recon_target = model::ReconTarget::kRaw;
                   else if (v == "embedded") c.model.recon_target = model::ReconTarget::kEmbedded;
                   else throw ConfigError("model.recon_target expects raw or embedded, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.model.recon_target == model::ReconTarget::kEmbedded ? "embedded" : "raw");
                 }});

    t.push_back(uint_entry("pretrain.batch", FIELD(pretrain.batch), 1));
    t.push_back(uint_entry("pretrain.steps", FIELD(pretrain.steps), 1));
    t.push_back(double_entry("pretrain.lr", FIELD(pretrain.lr)));
    t.push_back(double_entry("pretrain.warmup_frac", FIELD(pretrain.warmup_frac)));
    t.push_back(bool_entry("pretrain.constant_lr", FIELD(pretrain.constant_lr)));
    t.push_back(double_entry("pretrain.weight_decay", FIELD(pretrain.weight_decay)));
    t.push_back(double_entry("pretrain.clip", FIELD(pretrain.clip)));
    t.push_back(uint_entry("pretrain.log_every", FIELD(pretrain.log_every), 1));
    t.push_back(uint_entry("pretrain.checkpoint_every", FIELD(pretrain.checkpoint_every)));
    t.push_back(uint_entry("pretrain.stop_after", FIELD(pretrain.stop_after)));

    t.push_back(uint_entry("finetune.batch", FIELD(finetune.batch), 1));
    t.push_back(uint_entry("finetune.epochs", FIELD(finetune.epochs), 1));
    t.push_back(double_entry("finetune.lr", FIELD(finetune.lr)));
    t.push_back(double_entry("finetune.warmup_frac", FIELD(finetune.warmup_frac)));
    t.push_back(bool_entry("finetune.constant_lr", FIELD(finetune.constant_lr)));
    t.push_back(double_entry("finetune.weight_decay", FIELD(finetune.weight_decay)));
    t.push_back(double_entry("finetune.clip", FIELD(finetune.clip)));
    t.push_back(uint_entry("finetune.patience", FIELD(finetune.patience)));
    t.push_back(uint_entry("finetune.eval_batch", FIELD(finetune.eval_batch), 1));

    t.push_back(list_entry("bench.batches", FIELD(bench.batches)));
    t.push_back(list_entry("bench.lengths", FIELD(bench.lengths)));
    t.push_back(uint_entry("bench.repeats", FIELD(bench.repeats), 5));
    t.push_back(uint_entry("bench.warmup", FIELD(bench.warmup)));

    t.push_back(uint_entry("seed", FIELD(seed)));
    return t;
  }();
  return entries;
}

#undef FIELD

const Entry& find(const std::string& key) {
  for (const auto& e : table())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : table()) out.push_back(e.key);
  return out;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& e : table()) out += e.key + " = " + e.get(*this) + "\n";
  return out;
}

traffic::ExtractOptions RunConfig::extract_options() const {
  traffic::ExtractOptions o;
  o.repr = repr;
  o.min_packets = min_packets;
  o.limit_lower = limit_lower;
  o.limit_upper = limit_upper == 0 ? std::numeric_limits<std::size_t>::max() : limit_upper;
  o.ratios = ratios;
  o.seed = seed;
  return o;
}

model::ModelConfig RunConfig::model_config(std::size_t stride_len, std::size_t num_strides,
                                           std::size_t num_classes) const {
  model::ModelConfig c = model;
  c.stride_len = stride_len;
  c.num_strides = num_strides;
  c.num_classes = num_classes;
  c.validate();
  return c;
}

train::PretrainOptions RunConfig::pretrain_options() const {
  auto o = pretrain;
  o.seed = seed;
  return o;
}

train::FinetuneOptions RunConfig::finetune_options() const {
  auto o = finetune;
  o.seed = seed;
  return o;
}

train::BenchOptions RunConfig::bench_options() const {
  auto o = bench;
  o.seed = seed;
  return o;
}

}  // namespace netmamba::config
