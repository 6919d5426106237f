// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "autodiff/ops.hpp"
#include "autodiff/tensor.hpp"
#include "config/run_config.hpp"
#include "errors.hpp"
#include "model/checkpoint.hpp"
#include "model/model.hpp"
#include "netmamba/netmamba.h"
#include "traffic/dataset.hpp"
#include "traffic/extract.hpp"
#include "train/bench.hpp"
#include "train/synthetic.hpp"
#include "train/trainer.hpp"

using namespace netmamba;
using nlohmann::json;

struct nm_config {
  config::RunConfig rc;
};

struct nm_model {
  std::unique_ptr<model::NetMamba<float>> net;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_tensor;

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename F>
nm_status guarded(F&& body) {
  g_error.clear();
  g_tensor.clear();
  try {
    body();
    return NM_OK;
  } catch (const ArgumentError& e) {
    g_error = e.what();
    return NM_ERR_ARGUMENT;
  } catch (const CheckpointMismatch& e) {
    g_error = e.what();
    g_tensor = e.tensor();
    return NM_ERR_CHECKPOINT;
  } catch (const ConfigError& e) {
    g_error = e.what();
    return NM_ERR_CONFIG;
  } catch (const DataError& e) {
    g_error = e.what();
    return NM_ERR_DATA;
  } catch (const EmptyFlow& e) {
    g_error = e.what();
    return NM_ERR_DATA;
  } catch (const ParseError& e) {
    g_error = e.what();
    return NM_ERR_FORMAT;
  } catch (const UnsupportedFormat& e) {
    g_error = e.what();
    return NM_ERR_FORMAT;
  } catch (const MalformedPacket& e) {
    g_error = e.what();
    return NM_ERR_FORMAT;
  } catch (const NumericFault& e) {
    g_error = e.what();
    return NM_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_error = e.what();
    return NM_ERR_INTERNAL;
  } catch (...) {
    g_error = "unknown error";
    return NM_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " must not be null");
}

void put(char** out, const std::string& s) {
  if (!out) return;
  auto* buf = static_cast<char*>(std::malloc(s.size() + 1));
  if (!buf) throw std::bad_alloc();
  std::memcpy(buf, s.c_str(), s.size() + 1);
  *out = buf;
}

std::size_t class_count(const traffic::SampleSet& s) { return std::max<std::size_t>(2, s.num_classes); }

model::ModelConfig layout_config(const config::RunConfig& rc, const traffic::SampleSet& s, std::size_t classes) {
  return rc.model_config(s.stride_len, s.flow_bytes() / s.stride_len, classes);
}

traffic::SampleSet read_split(const std::filesystem::path& dir, const char* name) {
  const auto path = dir / (std::string(name) + ".nmstride");
  if (!std::filesystem::exists(path)) throw DataError("missing split file " + path.string());
  return traffic::read_sample_set(path);
}

json epoch_json(const train::EpochRecord& e) {
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"train_accuracy", e.train_accuracy},
          {"val_accuracy", e.val_accuracy},
          {"lr", e.lr}};
}

}  // namespace

extern "C" {

const char* nm_version(void) { return "0.1.0"; }
const char* nm_last_error(void) { return g_error.c_str(); }
const char* nm_last_error_tensor(void) { return g_tensor.c_str(); }
void nm_string_free(char* s) { std::free(s); }
void nm_set_num_threads(int n) { ad::set_num_threads(n); }

nm_config* nm_config_new(void) {
  try {
    return new nm_config();
  } catch (...) {
    return nullptr;
  }
}

void nm_config_free(nm_config* cfg) { delete cfg; }

nm_status nm_config_load_file(nm_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->rc.load_file(path);
  });
}

nm_status nm_config_set(nm_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->rc.set(key, value);
  });
}

nm_status nm_config_get(const nm_config* cfg, const char* key, char** out_value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(out_value, "out_value");
    put(out_value, cfg->rc.get(key));
  });
}

nm_status nm_config_dump(const nm_config* cfg, char** out_text) {
  return guarded([&] {
    need(cfg, "config");
    need(out_text, "out_text");
    put(out_text, cfg->rc.dump());
  });
}

nm_status nm_count_parameters(const nm_config* cfg, size_t num_classes, uint64_t* out_pretrain,
                              uint64_t* out_finetune) {
  return guarded([&] {
    need(cfg, "config");
    const auto& rc = cfg->rc;
    rc.repr.validate();
    const auto counts = model::count_parameters(rc.model_config(rc.repr.stride_len, rc.repr.num_strides(), num_classes));
    if (out_pretrain) *out_pretrain = counts.pretrain;
    if (out_finetune) *out_finetune = counts.finetune;
  });
}

nm_status nm_extract(const nm_config* cfg, const char* input_dir, const char* output_dir, char** out_summary) {
  return guarded([&] {
    need(cfg, "config");
    need(input_dir, "input_dir");
    need(output_dir, "output_dir");
    auto opts = cfg->rc.extract_options();
    opts.input = input_dir;
    opts.output = output_dir;
    const auto summary = traffic::extract_directory(opts);
    put(out_summary, traffic::summary_json(summary));
  });
}

nm_status nm_synthesize(const nm_config* cfg, size_t num_classes, size_t per_class, const char* output_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(output_dir, "output_dir");
    const auto& rc = cfg->rc;
    rc.repr.validate();
    if (num_classes < 2) throw ConfigError("synthetic set needs at least 2 classes");
    if (per_class < 1) throw ConfigError("synthetic set needs at least 1 sample per class");
    train::SyntheticSpec spec;
    spec.num_classes = num_classes;
    spec.per_class = per_class;
    spec.repr = rc.repr;
    spec.seed = rc.seed;
    const auto data = train::synthetic_dataset(spec);
    const auto split = traffic::split_indices(data.labels, rc.ratios, rc.seed);
    const std::filesystem::path out(output_dir);
    std::filesystem::create_directories(out);
    traffic::write_sample_set(out / "train.nmstride", data.select(split.train));
    traffic::write_sample_set(out / "val.nmstride", data.select(split.val));
    traffic::write_sample_set(out / "test.nmstride", data.select(split.test));
  });
}

nm_status nm_pretrain(const nm_config* cfg, const char* data_file, const char* out_dir, const char* resume_checkpoint,
                      char** out_report) {
  return guarded([&] {
    need(cfg, "config");
    need(data_file, "data_file");
    const auto& rc = cfg->rc;
    const auto data = traffic::read_sample_set(data_file);
    if (data.size() == 0) throw ConfigError("pre-training dataset is empty");
    model::NetMamba<float> net(layout_config(rc, data, class_count(data)), rc.seed);
    auto opts = rc.pretrain_options();
    if (out_dir) opts.out_dir = out_dir;
    model::CheckpointFile resume;
    if (resume_checkpoint) {
      resume = model::load_checkpoint(resume_checkpoint);
      net.load(resume);
    }
    const auto result = train::pretrain(net, data, opts, resume_checkpoint ? &resume : nullptr);
    json report{{"final_step", result.final_step}, {"best_window_loss", result.best_window_loss}};
    if (!result.log.empty()) {
      report["first_window_loss"] = result.log.front().loss;
      report["last_window_loss"] = result.log.back().loss;
    }
    put(out_report, report.dump(2));
  });
}

nm_status nm_finetune(const nm_config* cfg, const char* data_dir, const char* out_dir, const char* init_checkpoint,
                      char** out_report) {
  return guarded([&] {
    need(cfg, "config");
    need(data_dir, "data_dir");
    const auto& rc = cfg->rc;
    const std::filesystem::path dir(data_dir);
    if (!std::filesystem::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
    const auto tr = read_split(dir, "train");
    const auto va = read_split(dir, "val");
    const auto te = read_split(dir, "test");
    model::NetMamba<float> net(layout_config(rc, tr, tr.num_classes), rc.seed);
    if (init_checkpoint) net.load(model::load_checkpoint(init_checkpoint), net.encoder_parameters());
    auto opts = rc.finetune_options();
    if (out_dir) opts.out_dir = out_dir;
    const auto result = train::finetune(net, tr, va, te, opts);
    json epochs = json::array();
    for (const auto& e : result.epochs) epochs.push_back(epoch_json(e));
    json report{{"init", init_checkpoint ? std::string(init_checkpoint) : std::string("scratch")},
                {"best_epoch", result.best_epoch},
                {"best_val_accuracy", result.best_val_accuracy},
                {"epochs", epochs},
                {"test", train::to_json(result.test)}};
    put(out_report, report.dump(2));
  });
}

nm_status nm_model_load(const char* checkpoint, nm_model** out_model) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out_model, "out_model");
    const auto ckpt = model::load_checkpoint(checkpoint);
    if (!ckpt.meta.contains("config")) throw CheckpointMismatch("checkpoint has no model configuration", "");
    auto m = std::make_unique<nm_model>();
    m->net = std::make_unique<model::NetMamba<float>>(model::config_from_json(ckpt.meta.at("config")), 0);
    m->net->load(ckpt);
    *out_model = m.release();
  });
}

void nm_model_free(nm_model* model) { delete model; }

nm_status nm_model_save(const nm_model* model, const char* checkpoint) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint, "checkpoint");
    model::CheckpointFile ckpt;
    model->net->store(ckpt);
    model::save_checkpoint(checkpoint, ckpt);
  });
}

nm_status nm_model_config(const nm_model* model, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(out_json, "out_json");
    put(out_json, model::to_json(model->net->config()).dump(2));
  });
}

nm_status nm_evaluate(const nm_model* model, const char* data_file, size_t batch, char** out_report) {
  return guarded([&] {
    need(model, "model");
    need(data_file, "data_file");
    if (batch == 0) throw ConfigError("evaluation batch must be positive");
    const auto data = traffic::read_sample_set(data_file);
    if (data.size() == 0) throw DataError("evaluation split is empty");
    const auto result = train::evaluate(*model->net, data, batch);
    put(out_report, train::to_json(result.metrics).dump(2));
  });
}

nm_status nm_bench(const nm_config* cfg, const nm_model* model, char** out_csv, char** out_fit) {
  return guarded([&] {
    need(cfg, "config");
    need(out_csv, "out_csv");
    const auto& rc = cfg->rc;
    std::unique_ptr<model::NetMamba<float>> fresh;
    const model::NetMamba<float>* net = model ? model->net.get() : nullptr;
    if (!net) {
      rc.repr.validate();
      fresh = std::make_unique<model::NetMamba<float>>(
          rc.model_config(rc.repr.stride_len, rc.repr.num_strides(), 2), rc.seed);
      net = fresh.get();
    }
    const auto opts = rc.bench_options();
    const auto rows = train::bench(*net, opts);
    put(out_csv, train::bench_csv(rows));
    if (out_fit) {
      json fits = json::array();
      if (opts.lengths.size() >= 2) {
        for (std::size_t b : opts.batches) {
          std::vector<double> lengths, seconds;
          for (const auto& r : rows)
            if (r.batch == b) {
              lengths.push_back(double(r.seq_len));
              seconds.push_back(r.median_seconds);
            }
          fits.push_back({{"batch", b}, {"exponent", train::scaling_exponent(lengths, seconds)}});
        }
      }
      put(out_fit, json{{"scaling", fits}}.dump(2));
    }
  });
}

}  // extern "C"
