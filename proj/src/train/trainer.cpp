// SPDX-License-Identifier: Apache-2.0
#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "autodiff/ops.hpp"
#include "errors.hpp"

namespace netmamba::train {

namespace {

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kMaskStream = 2;

using Params = NamedParams<float>;

/// Sample order over an endless sequence of shuffled epochs.
class EpochOrder {
 public:
  EpochOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::size_t position) {
    const std::size_t epoch = position / n_;
    if (epoch != epoch_) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), 0);
      auto rng = keyed_rng(seed_, kDataStream, epoch);
      std::shuffle(perm_.begin(), perm_.end(), rng);
      epoch_ = epoch;
    }
    return perm_[position % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> perm_;
};

ad::Var<float> batch_input(const SampleSet& data, const std::vector<std::size_t>& idx, const model::ModelConfig& cfg) {
  std::vector<const std::uint8_t*> ptrs;
  ptrs.reserve(idx.size());
  for (auto i : idx) ptrs.push_back(data.sample(i));
  return ad::Var<float>::constant(model::strides_tensor<float>(ptrs, cfg));
}

std::vector<std::vector<float>> snapshot(const Params& params) {
  std::vector<std::vector<float>> out;
  for (const auto& [n, v] : params) out.emplace_back(v.data().begin(), v.data().end());
  return out;
}

void restore(Params& params, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& dst = params[i].second.mutable_value().data;
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

}  // namespace

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

void check_dataset(const SampleSet& data, const model::ModelConfig& cfg, bool need_labels) {
  if (data.flow_bytes() != cfg.num_strides * cfg.stride_len || data.stride_len != cfg.stride_len)
    throw DataError("sample layout (" + std::to_string(data.flow_bytes()) + " bytes, stride " +
                    std::to_string(data.stride_len) + ") does not match the model (" +
                    std::to_string(cfg.num_strides * cfg.stride_len) + " bytes, stride " +
                    std::to_string(cfg.stride_len) + ")");
  if (!need_labels) return;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = data.labels[i];
    if (label == traffic::kUnlabeled) throw DataError("sample " + std::to_string(i) + " has no label");
    if (label >= cfg.num_classes)
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(label) + " outside [0, " +
                      std::to_string(cfg.num_classes) + ")");
  }
}

model::CheckpointFile make_checkpoint(const NetMamba<float>& m, const AdamW* opt, std::size_t step,
                                      const std::string& phase) {
  model::CheckpointFile ck;
  m.store(ck);
  ck.meta["step"] = step;
  ck.meta["phase"] = phase;
  if (opt) opt->store(ck);
  return ck;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,loss,lr\n";
  out.precision(9);
  for (const auto& r : log) out << r.step << ',' << r.loss << ',' << r.lr << '\n';
}

PretrainResult pretrain(NetMamba<float>& model, const SampleSet& data, const PretrainOptions& opts,
                        const model::CheckpointFile* resume) {
  if (data.size() == 0) throw ConfigError("pre-training dataset is empty");
  if (opts.batch == 0 || opts.steps == 0) throw ConfigError("batch and steps must be positive");
  const auto& cfg = model.config();
  check_dataset(data, cfg, false);

  AdamW opt(model.pretrain_parameters(), AdamWConfig{0.9, 0.999, 1e-8, opts.weight_decay});
  std::size_t step = 0;
  if (resume) {
    opt.load(*resume);
    step = resume->meta.at("step").get<std::size_t>();
  }
  const Schedule sched{opts.lr, opts.steps, opts.warmup_frac, opts.constant_lr};
  const std::size_t end = opts.stop_after ? std::min(opts.stop_after, opts.steps) : opts.steps;
  const bool write = !opts.out_dir.empty();
  if (write) std::filesystem::create_directories(opts.out_dir);

  PretrainResult result;
  result.best_window_loss = std::numeric_limits<double>::infinity();
  EpochOrder order(data.size(), opts.seed);
  double window = 0;
  std::size_t window_n = 0;
  std::vector<std::size_t> idx(opts.batch);
  for (; step < end; ++step) {
    for (std::size_t b = 0; b < opts.batch; ++b) idx[b] = order.at(step * opts.batch + b);
    auto mask_rng = keyed_rng(opts.seed, kMaskStream, step);
    std::vector<model::MaskPlan> plans;
    for (std::size_t b = 0; b < opts.batch; ++b) plans.push_back(model::make_mask(cfg.seq_len(), cfg.mask_ratio, mask_rng));

    opt.zero_grad();
    const auto out = model.pretrain_forward(batch_input(data, idx, cfg), plans);
    const double loss = out.loss.item();
    if (!std::isfinite(loss)) throw NumericFault("non-finite reconstruction loss at step " + std::to_string(step + 1));
    if (out.loss.requires_grad()) {
      ad::backward(out.loss);
      clip_grad_norm(opt.params(), opts.clip);
      const double lr = sched.lr(step);
      opt.step(lr);
    }
    const double lr = sched.lr(step);
    result.per_step.push_back({step + 1, loss, lr});
    window += loss;
    ++window_n;
    const bool log_now = opts.log_every && (step + 1) % opts.log_every == 0;
    if (log_now || step + 1 == end) {
      const double mean = window / double(window_n);
      result.log.push_back({step + 1, mean, lr});
      if (mean < result.best_window_loss) {
        result.best_window_loss = mean;
        if (write) model::save_checkpoint(opts.out_dir / "pretrain_best.ckpt", make_checkpoint(model, &opt, step + 1, "pretrain"));
      }
      window = 0;
      window_n = 0;
    }
    if (write && opts.checkpoint_every && (step + 1) % opts.checkpoint_every == 0)
      model::save_checkpoint(opts.out_dir / ("pretrain_step" + std::to_string(step + 1) + ".ckpt"),
                             make_checkpoint(model, &opt, step + 1, "pretrain"));
  }
  result.final_step = step;
  if (write) {
    model::save_checkpoint(opts.out_dir / "pretrain_last.ckpt", make_checkpoint(model, &opt, step, "pretrain"));
    write_loss_csv(opts.out_dir / "loss_log.csv", result.log);
  }
  return result;
}

Evaluation evaluate(const NetMamba<float>& model, const SampleSet& split, std::size_t batch) {
  if (split.size() == 0) throw DataError("cannot evaluate an empty split");
  const auto& cfg = model.config();
  check_dataset(split, cfg, true);
  ad::NoGradGuard no_grad;
  Evaluation ev;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < split.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + batch); ++i) idx.push_back(i);
    const auto logits = model.finetune_forward(batch_input(split, idx, cfg));
    const std::size_t C = cfg.num_classes;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* row = logits.data().data() + r * C;
      ev.predictions.push_back(static_cast<std::size_t>(std::max_element(row, row + C) - row));
      labels.push_back(split.labels[idx[r]]);
    }
  }
  ev.metrics = compute_metrics(labels, ev.predictions, cfg.num_classes);
  return ev;
}

FinetuneResult finetune(NetMamba<float>& model, const SampleSet& train, const SampleSet& val, const SampleSet& test,
                        const FinetuneOptions& opts) {
  const auto& cfg = model.config();
  if (train.size() == 0) throw DataError("training split is empty");
  if (val.size() == 0) throw DataError("validation split is empty");
  if (test.size() == 0) throw DataError("test split is empty");
  if (opts.batch == 0 || opts.epochs == 0) throw ConfigError("batch and epochs must be positive");
  check_dataset(train, cfg, true);
  check_dataset(val, cfg, true);
  check_dataset(test, cfg, true);

  Params params = model.finetune_parameters();
  AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, opts.weight_decay});
  const std::size_t steps_per_epoch = (train.size() + opts.batch - 1) / opts.batch;
  const Schedule sched{opts.lr, steps_per_epoch * opts.epochs, opts.warmup_frac, opts.constant_lr};
  const bool write = !opts.out_dir.empty();
  if (write) std::filesystem::create_directories(opts.out_dir);

  FinetuneResult result;
  std::vector<std::vector<float>> best;
  double best_acc = -1;
  std::size_t step = 0, since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = keyed_rng(opts.seed, kDataStream, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    double lr = 0;
    for (std::size_t start = 0; start < train.size(); start += opts.batch, ++step) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), start + opts.batch)));
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      opt.zero_grad();
      const auto logits = model.finetune_forward(batch_input(train, idx, cfg));
      const auto loss = model::loss_cls(logits, labels);
      if (!std::isfinite(loss.item())) throw NumericFault("non-finite classification loss at step " + std::to_string(step + 1));
      ad::backward(loss);
      clip_grad_norm(opt.params(), opts.clip);
      lr = sched.lr(step);
      opt.step(lr);
      loss_sum += loss.item() * double(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const float* row = logits.data().data() + r * cfg.num_classes;
        correct += std::size_t(std::max_element(row, row + cfg.num_classes) - row) == labels[r];
      }
    }
    const double val_acc = evaluate(model, val, opts.eval_batch).metrics.accuracy;
    result.epochs.push_back({epoch + 1, loss_sum / double(train.size()), double(correct) / double(train.size()),
                             val_acc, lr});
    if (val_acc > best_acc) {
      best_acc = val_acc;
      best = snapshot(params);
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (opts.patience && ++since_best >= opts.patience) {
      break;
    }
  }
  restore(params, best);
  result.best_val_accuracy = best_acc;
  result.test = evaluate(model, test, opts.eval_batch).metrics;

  if (write) {
    model::save_checkpoint(opts.out_dir / "finetune_best.ckpt", make_checkpoint(model, nullptr, result.best_epoch, "finetune"));
    nlohmann::json j;
    j["best_epoch"] = result.best_epoch;
    j["best_val_accuracy"] = result.best_val_accuracy;
    j["test"] = to_json(result.test);
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : result.epochs)
      j["epochs"].push_back({{"epoch", e.epoch},
                             {"train_loss", e.train_loss},
                             {"train_accuracy", e.train_accuracy},
                             {"val_accuracy", e.val_accuracy},
                             {"lr", e.lr}});
    std::ofstream(opts.out_dir / "metrics.json", std::ios::trunc) << j.dump(2) << "\n";
  }
  return result;
}

}  // namespace netmamba::train
