// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "autodiff/tensor.hpp"

namespace netmamba::ssm {

using ad::Tensor;
using ad::Var;

template <typename T>
struct Discretized {
  Tensor<T> a_bar;  // (B, L, E, N)
  Tensor<T> b_bar;  // (B, L, E, N)
};

/// Zero-order hold with the first-order input approximation:
///   a_bar = exp(delta * A),  b_bar = delta * B.
/// delta: (B, L, E), A: (E, N), b_in: (B, L, N).
template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& b_in);

/// Sequential recurrence h_t = a_bar_t * h_{t-1} + b_bar_t * x_t, y_t = <C_t, h_t>,
/// with h_0 = 0, evaluated independently per (batch, channel) lane.
/// a_bar, b_bar: (B, L, E, N); c: (B, L, N); x: (B, L, E). Returns (B, L, E).
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c, const Tensor<T>& x);

/// Convolutional evaluation for time-invariant parameters: materializes the
/// kernel K[j] = sum_n C[n] a_bar[n]^j b_bar[n] per channel and convolves.
/// Throws ContractError when any of a_bar, b_bar, c varies along L.
template <typename T>
Tensor<T> ssm_conv_oracle(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c, const Tensor<T>& x);

/// Differentiable discretize + scan in one primitive. Ā and B̄ are formed on
/// the fly, never materialized; the backward pass recomputes hidden states one
/// batch element at a time.
/// delta: (B, L, E), A: (E, N), b_in: (B, L, N), c: (B, L, N), x: (B, L, E).
template <typename T>
Var<T> selective_scan_fused(const Var<T>& delta, const Var<T>& A, const Var<T>& b_in, const Var<T>& c,
                            const Var<T>& x);

}  // namespace netmamba::ssm
