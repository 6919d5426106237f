// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "autodiff/tensor.hpp"

namespace netmamba::ssm {

using ad::Var;

enum class NormKind { kRms, kLayer };

struct SSMDims {
  std::size_t d_model = 256;  // D
  std::size_t d_inner = 512;  // E
  std::size_t d_state = 16;   // N
  std::size_t dt_rank = 16;   // r
  std::size_t conv_kernel = 4;
  NormKind norm = NormKind::kRms;
  bool skip = false;  // additive D*x term inside the SSM

  /// Learnable scalars in one block with these dimensions.
  std::size_t parameter_count() const;
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;

/// Learnable state of one block: Norm -> in_x/in_z -> causal conv -> SiLU ->
/// (B, C, delta) -> selective scan -> gate -> out + residual.
template <typename T>
struct MambaBlockParams {
  SSMDims dims;
  Var<T> norm_gain;  // (D)
  Var<T> norm_bias;  // (D), layer norm only
  Var<T> in_x;       // (D, E)
  Var<T> in_z;       // (D, E)
  Var<T> conv_w;     // (E, k)
  Var<T> conv_b;     // (E)
  Var<T> w_b;        // (E, N)
  Var<T> w_c;        // (E, N)
  Var<T> dt_down;    // (E, r)
  Var<T> dt_up;      // (r, E)
  Var<T> dt_bias;    // (E)
  Var<T> a_log;      // (E, N); A = -exp(a_log)
  Var<T> d_skip;     // (E), skip only
  Var<T> out;        // (E, D)

  static MambaBlockParams init(const SSMDims& dims, std::mt19937_64& rng);
  /// Parameters in a fixed order, names prefixed with `prefix`.
  NamedParams<T> named(const std::string& prefix) const;
};

/// One block forward pass. Throws NumericFault naming `block_index` when the
/// output contains a non-finite value.
template <typename T>
Var<T> block_forward(const Var<T>& x, const MambaBlockParams<T>& p, std::size_t block_index = 0);

template <typename T>
Var<T> apply_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, NormKind kind);

}  // namespace netmamba::ssm
