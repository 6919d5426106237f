// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "autodiff/tensor.hpp"

namespace netmamba::ad {

// Differentiable primitives. Explicitly instantiated for float and double.
// Broadcasting is limited to "b's shape is a suffix of a's shape"; the
// gradient of the broadcast operand is summed over the leading axes.

/// (..., K) x (K, N) -> (..., N)
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& w);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> silu(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);

/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T> Var<T> rmsnorm(const Var<T>& x, const Var<T>& gain, T eps);
/// Mean-centering layer normalization over the last axis.
template <typename T> Var<T> layernorm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);

/// x: (B, L, C), kernel: (C, k), bias: (C).
/// y[b,t,c] = bias[c] + sum_j kernel[c,j] * x[b,t-j,c], with x[t<0] = 0.
template <typename T> Var<T> causal_conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias);

template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& order);
template <typename T> Var<T> reshape(const Var<T>& x, const Shape& shape);
/// Repeats `v` over new leading axes: result shape is lead ++ v.shape.
template <typename T> Var<T> expand(const Var<T>& v, const Shape& lead);
/// x: (B, L, D); rows: B*R indices into [0, L). Result (B, R, D).
template <typename T> Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows, std::size_t rows_per_batch);
template <typename T> Var<T> detach(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> sum_axis(const Var<T>& x, std::size_t axis);
template <typename T> Var<T> mean_axis(const Var<T>& x, std::size_t axis);

/// logits: (B, C). Mean over the batch of -log softmax(logits)[label].
template <typename T> Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels);
/// Weighted mean of (pred - target)^2; `mask` (same shape, may be null)
/// selects elements. An all-zero mask yields 0.
template <typename T> Var<T> mse(const Var<T>& pred, const Var<T>& target, const Tensor<T>* mask = nullptr);

/// Row-major GEMM on raw buffers: C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

bool all_finite(std::span<const float> v);
bool all_finite(std::span<const double> v);

/// Caps BLAS worker threads (NETMAMBA_THREADS).
void set_num_threads(int n);

}  // namespace netmamba::ad
