// SPDX-License-Identifier: Apache-2.0
#include "traffic/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>

#include "errors.hpp"

namespace netmamba::traffic {

namespace {

std::mt19937_64 class_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t cls) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(cls)};
  return std::mt19937_64(seq);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t(b[at]) | (std::uint32_t(b[at + 1]) << 8) | (std::uint32_t(b[at + 2]) << 16) |
         (std::uint32_t(b[at + 3]) << 24);
}

constexpr char kMagic[8] = {'N', 'M', 'S', 'T', 'R', 'I', 'D', 'E'};
constexpr std::size_t kHeaderSize = 8 + 2 + 6 * 4;

}  // namespace

std::vector<BalancedClass> balance_dataset(std::vector<std::vector<StrideSample>> per_class, std::size_t lower,
                                           std::size_t upper, std::uint64_t seed) {
  if (lower > upper) throw ConfigError("balance: lower limit exceeds upper limit");
  std::vector<BalancedClass> out;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& samples = per_class[c];
    if (samples.size() < lower) continue;
    if (samples.size() > upper) {
      std::vector<std::size_t> idx(samples.size());
      std::iota(idx.begin(), idx.end(), 0);
      auto rng = class_rng(seed, 1, c);
      // Partial Fisher-Yates: the first `upper` slots are a uniform sample.
      for (std::size_t i = 0; i < upper; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(upper);
      std::sort(idx.begin(), idx.end());
      std::vector<StrideSample> kept;
      kept.reserve(upper);
      for (auto i : idx) kept.push_back(std::move(samples[i]));
      samples = std::move(kept);
    }
    out.push_back(BalancedClass{c, std::move(samples)});
  }
  return out;
}

SplitIndices split_indices(const std::vector<std::uint32_t>& labels, SplitRatios r, std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitIndices out;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 3) {
      out.warnings.push_back("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                             " samples; all assigned to train");
      out.train.insert(out.train.end(), idx.begin(), idx.end());
      continue;
    }
    auto rng = class_rng(seed, 2, cls);
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = double(idx.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * r.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * r.test + 1e-9));
    const std::size_t n_train = idx.size() - n_val - n_test;
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  return out;
}

void SampleSet::append(const std::uint8_t* data, std::uint32_t label) {
  labels.push_back(label);
  bytes.insert(bytes.end(), data, data + flow_bytes());
}

SampleSet SampleSet::select(const std::vector<std::size_t>& indices) const {
  SampleSet out = *this;
  out.labels.clear();
  out.bytes.clear();
  out.bytes.reserve(indices.size() * flow_bytes());
  for (auto i : indices) out.append(sample(i), labels.at(i));
  return out;
}

std::vector<std::uint8_t> encode_sample_set(const SampleSet& s) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(kSampleFileVersion));
  out.push_back(static_cast<std::uint8_t>(kSampleFileVersion >> 8));
  for (auto v : {s.packets_per_flow, s.header_bytes, s.payload_bytes, s.stride_len, s.num_classes,
                 static_cast<std::uint32_t>(s.size())})
    put_u32(out, v);
  const std::size_t lb = s.flow_bytes();
  out.reserve(out.size() + s.size() * (4 + lb));
  for (std::size_t i = 0; i < s.size(); ++i) {
    put_u32(out, s.labels[i]);
    out.insert(out.end(), s.sample(i), s.sample(i) + lb);
  }
  return out;
}

SampleSet decode_sample_set(std::span<const std::uint8_t> b) {
  if (b.size() < kHeaderSize) throw ParseError("truncated NMSTRIDE header", b.size());
  if (std::memcmp(b.data(), kMagic, 8) != 0) throw UnsupportedFormat("not an NMSTRIDE file (bad magic)");
  const std::uint16_t version = static_cast<std::uint16_t>(b[8] | (b[9] << 8));
  if (version != kSampleFileVersion) throw UnsupportedFormat("unsupported NMSTRIDE version " + std::to_string(version));
  SampleSet s;
  s.packets_per_flow = get_u32(b, 10);
  s.header_bytes = get_u32(b, 14);
  s.payload_bytes = get_u32(b, 18);
  s.stride_len = get_u32(b, 22);
  s.num_classes = get_u32(b, 26);
  const std::uint32_t count = get_u32(b, 30);
  const std::size_t lb = s.flow_bytes();
  if (s.stride_len == 0 || lb % s.stride_len != 0) throw ParseError("NMSTRIDE header has inconsistent stride length", 22);
  std::size_t off = kHeaderSize;
  s.labels.reserve(count);
  s.bytes.reserve(std::size_t(count) * lb);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (b.size() - off < 4 + lb) throw ParseError("truncated NMSTRIDE sample " + std::to_string(i), off);
    const std::uint32_t label = get_u32(b, off);
    if (label != kUnlabeled && label >= s.num_classes)
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(label) + " outside [0, " +
                      std::to_string(s.num_classes) + ")");
    s.append(b.data() + off + 4, label);
    off += 4 + lb;
  }
  if (off != b.size()) throw ParseError("trailing bytes after NMSTRIDE samples", off);
  return s;
}

void write_sample_set(const std::filesystem::path& path, const SampleSet& s) {
  const auto bytes = encode_sample_set(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

SampleSet read_sample_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sample_set(bytes);
}

}  // namespace netmamba::traffic
