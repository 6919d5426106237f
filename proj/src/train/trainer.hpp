// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "model/checkpoint.hpp"
#include "model/model.hpp"
#include "traffic/dataset.hpp"
#include "train/metrics.hpp"
#include "train/optim.hpp"

namespace netmamba::train {

using model::NetMamba;
using traffic::SampleSet;

/// Generator keyed by (seed, a, b); used so any step can be replayed alone.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

struct PretrainOptions {
  std::size_t batch = 128;
  std::size_t steps = 150000;
  double lr = 1e-3;
  double warmup_frac = 0.05;
  bool constant_lr = false;
  double weight_decay = 0.05;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0: only best/last
  std::size_t stop_after = 0;        // stop early at this step (0: run to `steps`)
  std::filesystem::path out_dir;     // empty: write nothing
};

struct LossRecord {
  std::size_t step;  // 1-based, after the update
  double loss;
  double lr;
};

struct PretrainResult {
  std::vector<LossRecord> per_step;  // every step run in this call
  std::vector<LossRecord> log;       // window means, one per log_every steps
  std::size_t final_step = 0;
  double best_window_loss = 0;
};

/// Masked-reconstruction training. With `resume`, parameters are expected to
/// be loaded already and the optimizer state and step come from the file.
PretrainResult pretrain(NetMamba<float>& model, const SampleSet& data, const PretrainOptions& opts,
                        const model::CheckpointFile* resume = nullptr);

struct FinetuneOptions {
  std::size_t batch = 64;
  std::size_t epochs = 120;
  double lr = 2e-3;
  double warmup_frac = 0.05;
  bool constant_lr = false;
  double weight_decay = 0.05;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // stop after this many epochs without a new best (0: never)
  std::size_t eval_batch = 128;
  std::filesystem::path out_dir;
};

struct EpochRecord {
  std::size_t epoch;  // 1-based
  double train_loss;
  double train_accuracy;
  double val_accuracy;
  double lr;
};

struct FinetuneResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
  MetricsReport test;
};

/// Cross-entropy training of the encoder and head. Keeps the epoch with the
/// highest validation accuracy (earliest on ties), restores it into `model`,
/// and evaluates the test split once.
FinetuneResult finetune(NetMamba<float>& model, const SampleSet& train, const SampleSet& val, const SampleSet& test,
                        const FinetuneOptions& opts);

struct Evaluation {
  MetricsReport metrics;
  std::vector<std::size_t> predictions;
};

Evaluation evaluate(const NetMamba<float>& model, const SampleSet& split, std::size_t batch = 128);

/// Throws DataError when the layout differs from the model or a label is
/// missing or outside [0, C).
void check_dataset(const SampleSet& data, const model::ModelConfig& cfg, bool need_labels);

/// Stores parameters, optimizer state and metadata into one checkpoint.
model::CheckpointFile make_checkpoint(const NetMamba<float>& model, const AdamW* opt, std::size_t step,
                                      const std::string& phase);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);

}  // namespace netmamba::train
