// SPDX-License-Identifier: Apache-2.0
// netmamba: command-line front end over the C API.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "netmamba/netmamba.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitNumeric = 4;

int exit_code(nm_status s) {
  switch (s) {
    case NM_OK: return kExitOk;
    case NM_ERR_ARGUMENT:
    case NM_ERR_CONFIG:
    case NM_ERR_DATA:
    case NM_ERR_FORMAT: return kExitUsage;
    case NM_ERR_CHECKPOINT: return kExitCheckpoint;
    case NM_ERR_NUMERIC: return kExitNumeric;
    default: return kExitInternal;
  }
}

struct Failure {
  int code;
};

void check(nm_status s, const std::string& context) {
  if (s == NM_OK) return;
  std::cerr << "netmamba: " << context << ": " << nm_last_error() << "\n";
  if (s == NM_ERR_CHECKPOINT && *nm_last_error_tensor()) std::cerr << "netmamba: mismatched tensor: " << nm_last_error_tensor() << "\n";
  throw Failure{exit_code(s)};
}

/// Owns a string returned by the library.
class OwnedString {
 public:
  OwnedString() = default;
  OwnedString(const OwnedString&) = delete;
  OwnedString& operator=(const OwnedString&) = delete;
  ~OwnedString() { nm_string_free(p_); }
  char** out() { return &p_; }
  std::string str() const { return p_ ? std::string(p_) : std::string(); }

 private:
  char* p_ = nullptr;
};

/// Config file and flag overrides shared by every subcommand.
struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;  // applied last

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override any config key (key=value, repeatable)");
  }

  /// Built-in defaults, then the file, then --set, then dedicated flags.
  nm_config* build() const {
    nm_config* cfg = nm_config_new();
    if (!cfg) throw Failure{kExitInternal};
    try {
      if (!config_file.empty()) check(nm_config_load_file(cfg, config_file.c_str()), "config");
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          std::cerr << "netmamba: --set expects key=value, got '" << kv << "'\n";
          throw Failure{kExitUsage};
        }
        check(nm_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set");
      }
      for (const auto& [key, value] : flags) check(nm_config_set(cfg, key.c_str(), value.c_str()), key);
    } catch (...) {
      nm_config_free(cfg);
      throw;
    }
    return cfg;
  }
};

class ConfigHandle {
 public:
  explicit ConfigHandle(nm_config* c) : c_(c) {}
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
  ~ConfigHandle() { nm_config_free(c_); }
  nm_config* get() const { return c_; }

 private:
  nm_config* c_;
};

class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(const ModelHandle&) = delete;
  ModelHandle& operator=(const ModelHandle&) = delete;
  ~ModelHandle() { nm_model_free(m_); }
  nm_model** out() { return &m_; }
  nm_model* get() const { return m_; }

 private:
  nm_model* m_ = nullptr;
};

/// Registers a value flag that maps onto a config key.
void value_flag(CLI::App* cmd, Overrides& ov, const std::string& name, const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(
      name, [&ov, key](const std::string& v) { ov.flags.emplace_back(key, v); }, help);
}

void switch_flag(CLI::App* cmd, Overrides& ov, const std::string& name, const std::string& key, const std::string& value,
                 const std::string& help) {
  cmd->add_flag_callback(name, [&ov, key, value] { ov.flags.emplace_back(key, value); }, help);
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
  if (!out) {
    std::cerr << "netmamba: cannot write " << path << "\n";
    throw Failure{kExitUsage};
  }
}

void apply_thread_cap() {
  const char* env = std::getenv("NETMAMBA_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) {
    std::cerr << "netmamba: ignoring NETMAMBA_THREADS='" << env << "'\n";
    return;
  }
  nm_set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();

  CLI::App app{"NetMamba traffic representation, pre-training, fine-tuning and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", nm_version());

  // extract
  Overrides ex_ov;
  std::string ex_input, ex_output;
  auto* ex = app.add_subcommand("extract", "pcap directory -> train/val/test sample files");
  ex_ov.attach(ex);
  ex->add_option("--input", ex_input, "directory laid out as <class>/*.pcap")->required();
  ex->add_option("--output", ex_output, "output directory")->required();
  value_flag(ex, ex_ov, "--min-packets", "extract.min_packets", "drop flows with fewer IP packets");
  value_flag(ex, ex_ov, "--limit-lower", "extract.limit_lower", "drop classes with fewer flows");
  value_flag(ex, ex_ov, "--limit-upper", "extract.limit_upper", "subsample classes above this many flows");
  value_flag(ex, ex_ov, "--seed", "seed", "random seed");
  switch_flag(ex, ex_ov, "--no-anonymize-ips", "repr.anonymize_ips", "false", "keep IP addresses");
  auto* no_header = ex->add_flag_callback(
      "--no-header", [&ex_ov] { ex_ov.flags.emplace_back("repr.include_header", "false"); }, "zero the header region");
  auto* no_payload = ex->add_flag_callback(
      "--no-payload", [&ex_ov] { ex_ov.flags.emplace_back("repr.include_payload", "false"); }, "zero the payload region");
  no_header->excludes(no_payload);

  // synth
  Overrides sy_ov;
  std::string sy_output;
  std::size_t sy_classes = 10, sy_per_class = 200;
  auto* sy = app.add_subcommand("synth", "write a seeded synthetic labeled data set");
  sy_ov.attach(sy);
  sy->add_option("--output", sy_output, "output directory")->required();
  sy->add_option("--classes", sy_classes, "number of classes")->capture_default_str();
  sy->add_option("--per-class", sy_per_class, "samples per class")->capture_default_str();
  value_flag(sy, sy_ov, "--seed", "seed", "random seed");

  // pretrain
  Overrides pt_ov;
  std::string pt_data, pt_out, pt_resume;
  auto* pt = app.add_subcommand("pretrain", "masked-reconstruction pre-training");
  pt_ov.attach(pt);
  pt->add_option("--data", pt_data, "sample file (labels ignored)")->required()->check(CLI::ExistingFile);
  pt->add_option("--out", pt_out, "output directory for checkpoints and loss_log.csv")->required();
  pt->add_option("--resume", pt_resume, "continue from a pre-training checkpoint")->check(CLI::ExistingFile);
  value_flag(pt, pt_ov, "--steps", "pretrain.steps", "optimizer steps");
  value_flag(pt, pt_ov, "--batch", "pretrain.batch", "batch size");
  value_flag(pt, pt_ov, "--lr", "pretrain.lr", "peak learning rate");
  value_flag(pt, pt_ov, "--log-every", "pretrain.log_every", "steps per logged loss window");
  value_flag(pt, pt_ov, "--checkpoint-every", "pretrain.checkpoint_every", "extra checkpoint interval");
  value_flag(pt, pt_ov, "--stop-after", "pretrain.stop_after", "stop at this step");
  value_flag(pt, pt_ov, "--mask-ratio", "model.mask_ratio", "masking ratio");
  value_flag(pt, pt_ov, "--recon-target", "model.recon_target", "raw or embedded");
  value_flag(pt, pt_ov, "--seed", "seed", "random seed");
  switch_flag(pt, pt_ov, "--constant-lr", "pretrain.constant_lr", "true", "disable warmup and cosine decay");

  // finetune
  Overrides ft_ov;
  std::string ft_data, ft_out, ft_init;
  bool ft_scratch = false;
  auto* ft = app.add_subcommand("finetune", "classification fine-tuning");
  ft_ov.attach(ft);
  ft->add_option("--data", ft_data, "directory with train/val/test.nmstride")->required();
  ft->add_option("--out", ft_out, "output directory for finetune_best.ckpt and metrics.json")->required();
  auto* init = ft->add_option("--init", ft_init, "pre-trained checkpoint")->check(CLI::ExistingFile);
  auto* scratch = ft->add_flag("--from-scratch", ft_scratch, "random initialization");
  init->excludes(scratch);
  value_flag(ft, ft_ov, "--epochs", "finetune.epochs", "training epochs");
  value_flag(ft, ft_ov, "--batch", "finetune.batch", "batch size");
  value_flag(ft, ft_ov, "--lr", "finetune.lr", "peak learning rate");
  value_flag(ft, ft_ov, "--patience", "finetune.patience", "early stop after this many epochs without improvement");
  value_flag(ft, ft_ov, "--seed", "seed", "random seed");
  switch_flag(ft, ft_ov, "--constant-lr", "finetune.constant_lr", "true", "disable warmup and cosine decay");

  // evaluate
  std::string ev_ckpt, ev_data, ev_output;
  std::size_t ev_batch = 128;
  auto* ev = app.add_subcommand("evaluate", "metrics of a checkpoint on a sample file");
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "sample file")->required();
  ev->add_option("--batch", ev_batch, "evaluation batch size")->capture_default_str();
  ev->add_option("--output", ev_output, "write the JSON report here instead of stdout");

  // bench
  Overrides be_ov;
  std::string be_ckpt, be_output;
  auto* be = app.add_subcommand("bench", "encoder throughput and length scaling");
  be_ov.attach(be);
  be->add_option("--checkpoint", be_ckpt, "benchmark this model instead of a random one")->check(CLI::ExistingFile);
  be->add_option("--output", be_output, "write the CSV here instead of stdout");
  value_flag(be, be_ov, "--batches", "bench.batches", "comma-separated batch sizes");
  value_flag(be, be_ov, "--lengths", "bench.lengths", "comma-separated sequence lengths");
  value_flag(be, be_ov, "--repeats", "bench.repeats", "timed passes per cell (>= 5)");
  value_flag(be, be_ov, "--seed", "seed", "random seed");

  // params
  Overrides pa_ov;
  std::size_t pa_classes = 2;
  auto* pa = app.add_subcommand("params", "parameter counts for a configuration");
  pa_ov.attach(pa);
  pa->add_option("--classes", pa_classes, "number of classes")->capture_default_str();

  // config
  Overrides co_ov;
  auto* co = app.add_subcommand("config", "print the effective configuration");
  co_ov.attach(co);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ex->parsed()) {
      ConfigHandle cfg(ex_ov.build());
      OwnedString summary;
      check(nm_extract(cfg.get(), ex_input.c_str(), ex_output.c_str(), summary.out()), "extract");
      emit(summary.str(), "");
    } else if (sy->parsed()) {
      ConfigHandle cfg(sy_ov.build());
      check(nm_synthesize(cfg.get(), sy_classes, sy_per_class, sy_output.c_str()), "synth");
    } else if (pt->parsed()) {
      ConfigHandle cfg(pt_ov.build());
      OwnedString report;
      check(nm_pretrain(cfg.get(), pt_data.c_str(), pt_out.c_str(), pt_resume.empty() ? nullptr : pt_resume.c_str(),
                        report.out()),
            "pretrain");
      emit(report.str(), "");
    } else if (ft->parsed()) {
      if (ft_init.empty() && !ft_scratch) {
        std::cerr << "netmamba: finetune needs --init <checkpoint> or --from-scratch\n";
        return kExitUsage;
      }
      ConfigHandle cfg(ft_ov.build());
      OwnedString report;
      check(nm_finetune(cfg.get(), ft_data.c_str(), ft_out.c_str(), ft_init.empty() ? nullptr : ft_init.c_str(),
                        report.out()),
            "finetune");
      emit(report.str(), "");
    } else if (ev->parsed()) {
      ModelHandle model;
      check(nm_model_load(ev_ckpt.c_str(), model.out()), "evaluate");
      OwnedString report;
      check(nm_evaluate(model.get(), ev_data.c_str(), ev_batch, report.out()), "evaluate");
      emit(report.str(), ev_output);
    } else if (be->parsed()) {
      ConfigHandle cfg(be_ov.build());
      ModelHandle model;
      if (!be_ckpt.empty()) check(nm_model_load(be_ckpt.c_str(), model.out()), "bench");
      OwnedString csv, fit;
      check(nm_bench(cfg.get(), model.get(), csv.out(), fit.out()), "bench");
      emit(csv.str(), be_output);
      std::cerr << fit.str() << "\n";
    } else if (pa->parsed()) {
      ConfigHandle cfg(pa_ov.build());
      std::uint64_t pre = 0, fine = 0;
      check(nm_count_parameters(cfg.get(), pa_classes, &pre, &fine), "params");
      std::cout << "pretrain " << pre << "\nfinetune " << fine << "\n";
    } else if (co->parsed()) {
      ConfigHandle cfg(co_ov.build());
      OwnedString text;
      check(nm_config_dump(cfg.get(), text.out()), "config");
      emit(text.str(), "");
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitOk;
}
