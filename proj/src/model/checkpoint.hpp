// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace netmamba::model {

/// One named float32 tensor as stored on disk.
struct StoredTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// File layout:
///   "NMCKPT01"
///   u64 little-endian length of the JSON block
///   JSON {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
///   float32 little-endian values, tensors back to back in index order
struct CheckpointFile {
  nlohmann::json meta;  // config, step, anything the writer wants
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& ckpt);
/// Throws ParseError/UnsupportedFormat on a damaged file; CheckpointMismatch
/// when the index disagrees with the data length.
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

}  // namespace netmamba::model
