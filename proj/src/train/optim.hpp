// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "model/checkpoint.hpp"
#include "ssm/block.hpp"

namespace netmamba::train {

using ssm::NamedParams;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decay applies to matrices only; gains, biases, vectors and a_log are exempt.
bool decays(const std::string& name, std::size_t rank);

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(NamedParams<float> params, AdamWConfig cfg);

  /// Applies one update with learning rate `lr` from the accumulated grads.
  /// Throws NumericFault naming the first parameter with a non-finite grad;
  /// nothing is modified in that case.
  void step(double lr);
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const NamedParams<float>& params() const { return params_; }

  /// Moments are stored as "opt.m.<name>" / "opt.v.<name>".
  void store(model::CheckpointFile& ckpt) const;
  void load(const model::CheckpointFile& ckpt);

 private:
  NamedParams<float> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  std::vector<bool> decay_;
  std::uint64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`
/// (no-op when max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(const NamedParams<float>& params, double max_norm);

/// Linear warmup over ceil(warmup_frac * total) steps, then cosine decay to 0.
struct Schedule {
  double base_lr = 1e-3;
  std::size_t total_steps = 1;
  double warmup_frac = 0.05;
  bool constant = false;

  std::size_t warmup_steps() const;
  double lr(std::size_t step) const;  // step is 0-based
};

}  // namespace netmamba::train
