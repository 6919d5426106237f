// SPDX-License-Identifier: Apache-2.0
#include "model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "errors.hpp"

namespace netmamba::model {

namespace {

constexpr char kMagic[8] = {'N', 'M', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const StoredTensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (count(t.shape) != t.data.size()) throw CheckpointMismatch("tensor data does not match its shape", t.name);
    index.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size();
  }
  nlohmann::json head{{"meta", ckpt.meta}, {"tensors", index}};
  const std::string text = head.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset * 4);
  for (const auto& t : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> b) {
  if (b.size() < 16) throw ParseError("truncated checkpoint header", b.size());
  if (std::memcmp(b.data(), kMagic, 8) != 0) throw UnsupportedFormat("not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(b[8 + i]) << (8 * i);
  if (len > b.size() - 16) throw ParseError("checkpoint metadata block runs past end of file", 8);
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint metadata is not valid JSON: ") + e.what(), 16);
  }
  CheckpointFile ckpt;
  ckpt.meta = head.value("meta", nlohmann::json::object());
  const std::size_t data_start = 16 + len;
  const std::size_t floats = (b.size() - data_start) / sizeof(float);
  if ((b.size() - data_start) % sizeof(float) != 0)
    throw CheckpointMismatch("checkpoint data length is not a whole number of floats", "");
  std::size_t expected = 0;
  for (const auto& entry : head.at("tensors")) {
    StoredTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = count(t.shape);
    if (offset != expected || offset + n > floats)
      throw CheckpointMismatch("tensor " + t.name + " lies outside the checkpoint data", t.name);
    t.data.resize(n);
    std::memcpy(t.data.data(), b.data() + data_start + offset * sizeof(float), n * sizeof(float));
    expected += n;
    ckpt.tensors.push_back(std::move(t));
  }
  if (expected != floats)
    throw CheckpointMismatch("checkpoint holds " + std::to_string(floats) + " floats but its index lists " +
                                 std::to_string(expected),
                             "");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace netmamba::model
