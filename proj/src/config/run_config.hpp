// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "model/model.hpp"
#include "traffic/extract.hpp"
#include "train/bench.hpp"
#include "train/trainer.hpp"

namespace netmamba::config {

/// Every tunable of the pipeline. Keys are `section.field` (plus `seed`);
/// see keys() for the full list.
struct RunConfig {
  traffic::ReprConfig repr;
  std::size_t min_packets = 1;
  std::size_t limit_lower = 0;
  std::size_t limit_upper = 0;  // 0: no upper bound
  traffic::SplitRatios ratios;
  model::ModelConfig model;
  train::PretrainOptions pretrain;
  train::FinetuneOptions finetune;
  train::BenchOptions bench;
  std::uint64_t seed = 0;

  /// Parses and type-checks `value`, then assigns it. Throws ConfigError on
  /// an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Reads `key = value` lines; `#` starts a comment. Errors name the line.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "config");

  /// All accepted keys, in documentation order.
  static std::vector<std::string> keys();

  /// `key = value` lines for every key.
  std::string dump() const;

  traffic::ExtractOptions extract_options() const;
  /// Model configuration for a given sample layout and class count.
  model::ModelConfig model_config(std::size_t stride_len, std::size_t num_strides, std::size_t num_classes) const;
  train::PretrainOptions pretrain_options() const;
  train::FinetuneOptions finetune_options() const;
  train::BenchOptions bench_options() const;
};

}  // namespace netmamba::config
