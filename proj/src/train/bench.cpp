// SPDX-License-Identifier: Apache-2.0
#include "train/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "errors.hpp"

namespace netmamba::train {

std::vector<BenchRow> bench(const model::NetMamba<float>& model, const BenchOptions& opts) {
  if (opts.repeats < 5) throw ConfigError("bench needs at least 5 timed repeats");
  const std::size_t D = model.config().d_enc;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  ad::NoGradGuard no_grad;
  std::vector<BenchRow> rows;
  for (std::size_t L : opts.lengths) {
    for (std::size_t B : opts.batches) {
      ad::Tensor<float> x({B, L, D});
      for (auto& v : x.data) v = dist(rng);
      const auto input = ad::Var<float>::constant(std::move(x));
      for (std::size_t w = 0; w < opts.warmup; ++w) (void)model.encode(input);
      ad::MemoryTracker::reset_peak();
      std::vector<double> times;
      for (std::size_t r = 0; r < opts.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = model.encode(input);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
      std::sort(times.begin(), times.end());
      BenchRow row;
      row.batch = B;
      row.seq_len = L;
      row.median_seconds = times[times.size() / 2];
      row.samples_per_sec = double(B) / row.median_seconds;
      row.peak_bytes = ad::MemoryTracker::peak();
      rows.push_back(row);
    }
  }
  return rows;
}

double scaling_exponent(const std::vector<double>& lengths, const std::vector<double>& seconds) {
  if (lengths.size() != seconds.size() || lengths.size() < 2) throw ConfigError("scaling fit needs two or more points");
  double mx = 0, my = 0;
  const double n = double(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    mx += std::log(lengths[i]) / n;
    my += std::log(seconds[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double dx = std::log(lengths[i]) - mx;
    sxy += dx * (std::log(seconds[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "batch,seq_len,samples_per_sec,peak_bytes\n";
  out.precision(6);
  for (const auto& r : rows) out << r.batch << ',' << r.seq_len << ',' << r.samples_per_sec << ',' << r.peak_bytes << '\n';
  return out.str();
}

}  // namespace netmamba::train
