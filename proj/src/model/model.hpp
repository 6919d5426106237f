// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "autodiff/tensor.hpp"
#include "model/checkpoint.hpp"
#include "ssm/block.hpp"

namespace netmamba::model {

using ad::Tensor;
using ad::Var;
using ssm::NamedParams;

enum class ReconTarget { kRaw, kEmbedded };

struct ModelConfig {
  std::size_t stride_len = 4;     // L_s
  std::size_t num_strides = 400;  // N_s; L = N_s + 1
  std::size_t d_enc = 256;
  std::size_t e_enc = 512;
  std::size_t depth_enc = 4;
  std::size_t d_dec = 128;
  std::size_t e_dec = 256;
  std::size_t depth_dec = 2;
  std::size_t d_state = 16;
  std::size_t dt_rank = 16;
  std::size_t conv_kernel = 4;
  double mask_ratio = 0.9;
  std::size_t num_classes = 2;
  bool use_pos_embed = true;
  bool patch_split = false;  // 2-D patch token layout instead of 1-D strides
  bool ssm_skip = false;     // additive D*x term in every scan
  ssm::NormKind norm = ssm::NormKind::kRms;
  ReconTarget recon_target = ReconTarget::kRaw;

  std::size_t seq_len() const { return num_strides + 1; }
  /// ceil((1 - r) * L): visible strides plus the class token.
  std::size_t visible_len() const;
  ssm::SSMDims encoder_dims() const;
  ssm::SSMDims decoder_dims() const;
  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

struct ParameterCounts {
  std::size_t pretrain = 0;  // embedding + encoder + decoder + reconstruction head
  std::size_t finetune = 0;  // embedding + encoder + classification head
};

/// Closed-form count; cross-checked against an instantiated model in tests.
ParameterCounts count_parameters(const ModelConfig& cfg);

/// Visible / masked stride indices for one sample. The class token (index
/// N_s) is implicit and always visible.
struct MaskPlan {
  std::vector<std::size_t> permutation;
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending
};

/// Visible count is visible_len(L, r) - 1.
MaskPlan make_mask(std::size_t seq_len, double ratio, std::mt19937_64& rng);
std::size_t visible_len(std::size_t seq_len, double ratio);

/// Packs byte samples into a (B, N_s, L_s) tensor scaled to [0, 1],
/// applying the patch layout when cfg.patch_split is set.
template <typename T>
Tensor<T> strides_tensor(const std::vector<const std::uint8_t*>& samples, const ModelConfig& cfg);

template <typename T>
struct PretrainOutput {
  Var<T> pred;  // (B, masked, target width)
  Var<T> loss;  // scalar
};

template <typename T>
class NetMamba {
 public:
  NetMamba(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// x: (B, N_s, L_s) -> (B, L, D_enc).
  Var<T> embed(const Var<T>& x) const;
  /// Encoder blocks plus the final norm.
  Var<T> encode(const Var<T>& tokens) const;
  PretrainOutput<T> pretrain_forward(const Var<T>& x, const std::vector<MaskPlan>& plans) const;
  /// (B, C) unnormalized logits from the class-token row.
  Var<T> finetune_forward(const Var<T>& x) const;

  /// Every parameter, fixed order.
  NamedParams<T> parameters() const;
  NamedParams<T> pretrain_parameters() const;
  NamedParams<T> finetune_parameters() const;
  /// Embedding + encoder subset shared by both phases.
  NamedParams<T> encoder_parameters() const;

  /// Copies values from `ckpt` into the listed parameters. Every listed name
  /// must be present with an identical shape (CheckpointMismatch otherwise).
  void load(const CheckpointFile& ckpt, const NamedParams<T>& which);
  void load(const CheckpointFile& ckpt) { load(ckpt, parameters()); }
  void store(CheckpointFile& ckpt) const;

 private:
  Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) const;

  ModelConfig cfg_;
  Var<T> embed_w_, cls_token_, pos_enc_;
  std::vector<ssm::MambaBlockParams<T>> enc_;
  Var<T> enc_norm_g_, enc_norm_b_;
  Var<T> enc2dec_w_, enc2dec_b_, mask_token_, pos_dec_;
  std::vector<ssm::MambaBlockParams<T>> dec_;
  Var<T> dec_norm_g_, dec_norm_b_;
  Var<T> recon_w_, recon_b_;
  Var<T> head_w1_, head_b1_, head_w2_, head_b2_;
};

/// Mean cross-entropy over the batch. Throws ContractError on a bad label.
template <typename T>
Var<T> loss_cls(const Var<T>& logits, const std::vector<std::size_t>& labels);

}  // namespace netmamba::model
