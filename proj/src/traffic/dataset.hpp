// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "traffic/repr.hpp"

namespace netmamba::traffic {

/// Per-class sample lists after applying flow-count limits.
struct BalancedClass {
  std::size_t source_class;  // index in the input
  std::vector<StrideSample> samples;
};

/// Drops classes below `lower`; classes above `upper` are subsampled without
/// replacement (original relative order kept). Deterministic in `seed`.
std::vector<BalancedClass> balance_dataset(std::vector<std::vector<StrideSample>> per_class, std::size_t lower,
                                           std::size_t upper, std::uint64_t seed);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
  std::vector<std::string> warnings;
};

/// Stratified shuffle split over sample indices, grouped by `labels`.
/// val/test sizes are floor(n * ratio); the remainder goes to train. Classes
/// with fewer than 3 samples go entirely to train (with a warning).
SplitIndices split_indices(const std::vector<std::uint32_t>& labels, SplitRatios ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// NMSTRIDE sample files
//
//   "NMSTRIDE"                       8 bytes
//   version                          u16 (= 1)
//   M, N_h, N_p, L_s, C, count       u32 each
//   count x { label u32, L_b bytes } (label 0xFFFFFFFF = unlabeled)
//
// All integers little-endian.
// ---------------------------------------------------------------------------

constexpr std::uint16_t kSampleFileVersion = 1;
constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;

struct SampleSet {
  std::uint32_t packets_per_flow = 0, header_bytes = 0, payload_bytes = 0, stride_len = 0, num_classes = 0;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> bytes;  // count * flow_bytes(), row-major

  std::size_t flow_bytes() const { return std::size_t(packets_per_flow) * (header_bytes + payload_bytes); }
  std::size_t size() const { return labels.size(); }
  const std::uint8_t* sample(std::size_t i) const { return bytes.data() + i * flow_bytes(); }
  void append(const std::uint8_t* data, std::uint32_t label);
  /// Subset in the given order.
  SampleSet select(const std::vector<std::size_t>& indices) const;
};

std::vector<std::uint8_t> encode_sample_set(const SampleSet& s);
SampleSet decode_sample_set(std::span<const std::uint8_t> bytes);
void write_sample_set(const std::filesystem::path& path, const SampleSet& s);
SampleSet read_sample_set(const std::filesystem::path& path);

}  // namespace netmamba::traffic
