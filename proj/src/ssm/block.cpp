// SPDX-License-Identifier: Apache-2.0
#include "ssm/block.hpp"

#include <cmath>

#include "autodiff/ops.hpp"
#include "errors.hpp"
#include "ssm/scan.hpp"

namespace netmamba::ssm {

using ad::Shape;
using ad::Tensor;

std::size_t SSMDims::parameter_count() const {
  const std::size_t D = d_model, E = d_inner, N = d_state, r = dt_rank, k = conv_kernel;
  std::size_t n = D;  // norm gain
  if (norm == NormKind::kLayer) n += D;
  n += 2 * D * E;      // in_x, in_z
  n += E * k + E;      // conv
  n += 2 * E * N;      // w_b, w_c
  n += E * r + r * E;  // delta projection
  n += E;              // delta bias
  n += E * N;          // a_log
  if (skip) n += E;
  n += E * D;  // out
  return n;
}

namespace {

template <typename T>
Var<T> uniform(const Shape& shape, T bound, std::mt19937_64& rng, const char* name) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return Var<T>::parameter(std::move(t), name);
}

template <typename T>
Var<T> filled(const Shape& shape, T value, const char* name) {
  Tensor<T> t(shape);
  std::fill(t.data.begin(), t.data.end(), value);
  return Var<T>::parameter(std::move(t), name);
}

}  // namespace

template <typename T>
MambaBlockParams<T> MambaBlockParams<T>::init(const SSMDims& d, std::mt19937_64& rng) {
  if (d.d_model == 0 || d.d_inner == 0 || d.d_state == 0 || d.dt_rank == 0 || d.conv_kernel == 0)
    throw ConfigError("block dimensions must be positive");
  const std::size_t D = d.d_model, E = d.d_inner, N = d.d_state, r = d.dt_rank, k = d.conv_kernel;
  MambaBlockParams p;
  p.dims = d;
  p.norm_gain = filled<T>({D}, T(1), "norm.gain");
  if (d.norm == NormKind::kLayer) p.norm_bias = filled<T>({D}, T(0), "norm.bias");
  const T in_bound = T(1) / std::sqrt(T(D));
  const T e_bound = T(1) / std::sqrt(T(E));
  p.in_x = uniform<T>({D, E}, in_bound, rng, "in_x");
  p.in_z = uniform<T>({D, E}, in_bound, rng, "in_z");
  p.conv_w = uniform<T>({E, k}, T(1) / std::sqrt(T(k)), rng, "conv.w");
  p.conv_b = uniform<T>({E}, T(1) / std::sqrt(T(k)), rng, "conv.b");
  p.w_b = uniform<T>({E, N}, e_bound, rng, "w_b");
  p.w_c = uniform<T>({E, N}, e_bound, rng, "w_c");
  p.dt_down = uniform<T>({E, r}, e_bound, rng, "dt_down");
  p.dt_up = uniform<T>({r, E}, T(1) / std::sqrt(T(r)), rng, "dt_up");

  // softplus(dt_bias) log-uniform in [1e-3, 1e-1].
  std::uniform_real_distribution<double> logu(std::log(1e-3), std::log(1e-1));
  Tensor<T> bias({E});
  for (auto& v : bias.data) {
    const double dt = std::exp(logu(rng));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  p.dt_bias = Var<T>::parameter(std::move(bias), "dt_bias");

  Tensor<T> alog({E, N});
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t n = 0; n < N; ++n) alog[e * N + n] = static_cast<T>(std::log(double(n + 1)));
  p.a_log = Var<T>::parameter(std::move(alog), "a_log");
  if (d.skip) p.d_skip = filled<T>({E}, T(1), "d_skip");
  p.out = uniform<T>({E, D}, e_bound, rng, "out");
  return p;
}

template <typename T>
NamedParams<T> MambaBlockParams<T>::named(const std::string& prefix) const {
  NamedParams<T> list;
  auto put = [&](const char* n, const Var<T>& v) {
    if (v.defined()) list.emplace_back(prefix + n, v);
  };
  put("norm.gain", norm_gain);
  put("norm.bias", norm_bias);
  put("in_x", in_x);
  put("in_z", in_z);
  put("conv.w", conv_w);
  put("conv.b", conv_b);
  put("w_b", w_b);
  put("w_c", w_c);
  put("dt_down", dt_down);
  put("dt_up", dt_up);
  put("dt_bias", dt_bias);
  put("a_log", a_log);
  put("d_skip", d_skip);
  put("out", out);
  return list;
}

template <typename T>
Var<T> apply_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, NormKind kind) {
  constexpr T eps = T(1e-5);
  if (kind == NormKind::kLayer) return ad::layernorm(x, gain, bias, eps);
  return ad::rmsnorm(x, gain, eps);
}

template <typename T>
Var<T> block_forward(const Var<T>& x, const MambaBlockParams<T>& p, std::size_t block_index) {
  if (x.rank() != 3 || x.dim(2) != p.dims.d_model)
    ad::throw_shape_error("block_forward", x.shape(), {0, 0, p.dims.d_model});
  const Var<T> xn = apply_norm(x, p.norm_gain, p.norm_bias, p.dims.norm);
  const Var<T> xp = ad::matmul(xn, p.in_x);
  const Var<T> z = ad::matmul(xn, p.in_z);
  const Var<T> xc = ad::silu(ad::causal_conv1d(xp, p.conv_w, p.conv_b));
  const Var<T> b_in = ad::matmul(xc, p.w_b);
  const Var<T> c = ad::matmul(xc, p.w_c);
  const Var<T> delta = ad::softplus(ad::add(ad::matmul(ad::matmul(xc, p.dt_down), p.dt_up), p.dt_bias));
  const Var<T> A = ad::neg(ad::exp(p.a_log));
  Var<T> y = selective_scan_fused(delta, A, b_in, c, xc);
  if (p.d_skip.defined()) y = ad::add(y, ad::mul(xc, p.d_skip));
  const Var<T> gated = ad::mul(y, ad::silu(z));
  Var<T> out = ad::add(ad::matmul(gated, p.out), x);
  if (!ad::all_finite(out.data()))
    throw NumericFault("non-finite activation in block " + std::to_string(block_index));
  return out;
}

template struct MambaBlockParams<float>;
template struct MambaBlockParams<double>;
template Var<float> block_forward(const Var<float>&, const MambaBlockParams<float>&, std::size_t);
template Var<double> block_forward(const Var<double>&, const MambaBlockParams<double>&, std::size_t);
template Var<float> apply_norm(const Var<float>&, const Var<float>&, const Var<float>&, NormKind);
template Var<double> apply_norm(const Var<double>&, const Var<double>&, const Var<double>&, NormKind);

}  // namespace netmamba::ssm
