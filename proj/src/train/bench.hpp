// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "model/model.hpp"

namespace netmamba::train {

struct BenchRow {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  double median_seconds = 0;
  double samples_per_sec = 0;
  std::size_t peak_bytes = 0;  // tensor storage high-water mark during the timed passes
};

struct BenchOptions {
  std::vector<std::size_t> batches{1, 8, 32};
  std::vector<std::size_t> lengths{400, 800, 1600};
  std::size_t repeats = 5;  // timed passes per cell (median reported)
  std::size_t warmup = 1;   // untimed passes per cell
  std::uint64_t seed = 0;
};

/// Times encoder forward passes (no gradient recording) on random token
/// sequences for every (batch, length) cell.
std::vector<BenchRow> bench(const model::NetMamba<float>& model, const BenchOptions& opts);

/// Slope of log(time) against log(length) by least squares.
double scaling_exponent(const std::vector<double>& lengths, const std::vector<double>& seconds);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace netmamba::train
