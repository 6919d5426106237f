// SPDX-License-Identifier: Apache-2.0
#include "autodiff/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace netmamba::ad {

template <>
void gemm<float>(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                 const float* b, float beta, float* c) {
  if (m == 0 || n == 0) return;
  const int lda = static_cast<int>(ta ? m : k);
  const int ldb = static_cast<int>(tb ? k : n);
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, lda, b, ldb, beta, c, static_cast<int>(n));
}

template <>
void gemm<double>(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                  const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  const int lda = static_cast<int>(ta ? m : k);
  const int ldb = static_cast<int>(tb ? k : n);
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, lda, b, ldb, beta, c, static_cast<int>(n));
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}
bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

extern "C" void openblas_set_num_threads(int);

void set_num_threads(int n) {
  if (n > 0) openblas_set_num_threads(n);
}

namespace {

template <typename T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  p.ensure_grad();
  return p;
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x[i]);
  return make_result<T>(std::move(out), {a}, [df](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    const auto& x = pa.value.data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < x.size(); ++i) pa.grad[i] += self.grad[i] * df(x[i], y[i]);
  });
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& w) {
  if (w.rank() != 2 || a.rank() < 1 || a.shape().back() != w.dim(0)) throw_shape_error("matmul", a.shape(), w.shape());
  const std::size_t k = w.dim(0), n = w.dim(1), m = a.size() / std::max<std::size_t>(k, 1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  gemm<T>(false, false, m, n, k, T(1), a.value().data.data(), w.value().data.data(), T(0), out.data.data());
  return make_result<T>(std::move(out), {a, w}, [m, n, k](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pw = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      gemm<T>(false, true, m, k, n, T(1), self.grad.data(), pw.value.data.data(), T(1), pa.grad.data());
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      gemm<T>(true, false, k, n, m, T(1), pa.value.data.data(), self.grad.data(), T(1), pw.grad.data());
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) throw_shape_error("add", a.shape(), b.shape());
  const std::size_t inner = b.size(), outer = inner ? a.size() / inner : 0;
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] = x[o * inner + i] + y[i];
  return make_result<T>(std::move(out), {a, b}, [outer, inner](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) pb.grad[i] += self.grad[o * inner + i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, neg(b));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) throw_shape_error("mul", a.shape(), b.shape());
  const std::size_t inner = b.size(), outer = inner ? a.size() / inner : 0;
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] = x[o * inner + i] * y[i];
  return make_result<T>(std::move(out), {a, b}, [outer, inner](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& x = pa.value.data;
    const auto& y = pb.value.data;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) pa.grad[o * inner + i] += self.grad[o * inner + i] * y[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) pb.grad[i] += self.grad[o * inner + i] * x[o * inner + i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return unary(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Var<T> rmsnorm(const Var<T>& x, const Var<T>& gain, T eps) {
  if (!(eps > T(0))) throw ContractError("rmsnorm: eps must be positive");
  if (gain.rank() != 1 || x.rank() < 1 || x.shape().back() != gain.dim(0))
    throw_shape_error("rmsnorm", x.shape(), gain.shape());
  const std::size_t d = gain.dim(0), rows = x.size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> inv(rows);
  const auto& xv = x.value().data;
  const auto& g = gain.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += row[i] * row[i];
    inv[r] = T(1) / std::sqrt(ss / T(d) + eps);
    for (std::size_t i = 0; i < d; ++i) out.data[r * d + i] = row[i] * inv[r] * g[i];
  }
  return make_result<T>(std::move(out), {x, gain}, [d, rows, inv = std::move(inv)](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    const auto& xv = px.value.data;
    const auto& g = pg.value.data;
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      const T ir = inv[r];
      if (px.requires_grad) {
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += gy[i] * g[i] * row[i];
        const T c = ir * ir * ir * dot / T(d);
        for (std::size_t i = 0; i < d; ++i) px.grad[r * d + i] += ir * g[i] * gy[i] - row[i] * c;
      }
      if (pg.requires_grad) {
        for (std::size_t i = 0; i < d; ++i) pg.grad[i] += gy[i] * row[i] * ir;
      }
    }
  });
}

template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (!(eps > T(0))) throw ContractError("layernorm: eps must be positive");
  if (gain.rank() != 1 || x.rank() < 1 || x.shape().back() != gain.dim(0))
    throw_shape_error("layernorm", x.shape(), gain.shape());
  if (bias.shape() != gain.shape()) throw_shape_error("layernorm", gain.shape(), bias.shape());
  const std::size_t d = gain.dim(0), rows = x.size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> inv(rows), xhat(x.size());
  const auto& xv = x.value().data;
  const auto& g = gain.value().data;
  const auto& b = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    inv[r] = T(1) / std::sqrt(var / T(d) + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * inv[r];
      out.data[r * d + i] = xhat[r * d + i] * g[i] + b[i];
    }
  }
  return make_result<T>(std::move(out), {x, gain, bias},
                        [d, rows, inv = std::move(inv), xhat = std::move(xhat)](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const auto& g = pg.value.data;
                          if (px.requires_grad) px.ensure_grad();
                          if (pg.requires_grad) pg.ensure_grad();
                          if (pb.requires_grad) pb.ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gy = self.grad.data() + r * d;
                            const T* xh = xhat.data() + r * d;
                            if (px.requires_grad) {
                              T m1 = 0, m2 = 0;
                              for (std::size_t i = 0; i < d; ++i) {
                                const T dxh = gy[i] * g[i];
                                m1 += dxh;
                                m2 += dxh * xh[i];
                              }
                              m1 /= T(d);
                              m2 /= T(d);
                              for (std::size_t i = 0; i < d; ++i)
                                px.grad[r * d + i] += inv[r] * (gy[i] * g[i] - m1 - xh[i] * m2);
                            }
                            for (std::size_t i = 0; i < d; ++i) {
                              if (pg.requires_grad) pg.grad[i] += gy[i] * xh[i];
                              if (pb.requires_grad) pb.grad[i] += gy[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> causal_conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
  if (x.rank() != 3 || kernel.rank() != 2 || kernel.dim(0) != x.dim(2))
    throw_shape_error("causal_conv1d", x.shape(), kernel.shape());
  if (bias.rank() != 1 || bias.dim(0) != x.dim(2)) throw_shape_error("causal_conv1d", x.shape(), bias.shape());
  const std::size_t nb = x.dim(0), len = x.dim(1), ch = x.dim(2), k = kernel.dim(1);
  Tensor<T> out(x.shape());
  const auto& xv = x.value().data;
  const auto& w = kernel.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t b = 0; b < nb; ++b) {
    const T* xb = xv.data() + b * len * ch;
    T* yb = out.data.data() + b * len * ch;
    for (std::size_t t = 0; t < len; ++t) {
      T* yr = yb + t * ch;
      for (std::size_t c = 0; c < ch; ++c) yr[c] = bv[c];
      for (std::size_t j = 0; j < k && j <= t; ++j) {
        const T* xr = xb + (t - j) * ch;
        for (std::size_t c = 0; c < ch; ++c) yr[c] += w[c * k + j] * xr[c];
      }
    }
  }
  return make_result<T>(std::move(out), {x, kernel, bias}, [nb, len, ch, k](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pw.requires_grad) pw.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    const auto& xv = px.value.data;
    const auto& w = pw.value.data;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t t = 0; t < len; ++t) {
        const T* gy = self.grad.data() + (b * len + t) * ch;
        if (pb.requires_grad)
          for (std::size_t c = 0; c < ch; ++c) pb.grad[c] += gy[c];
        for (std::size_t j = 0; j < k && j <= t; ++j) {
          const std::size_t src = (b * len + t - j) * ch;
          if (px.requires_grad)
            for (std::size_t c = 0; c < ch; ++c) px.grad[src + c] += w[c * k + j] * gy[c];
          if (pw.requires_grad)
            for (std::size_t c = 0; c < ch; ++c) pw.grad[c * k + j] += gy[c] * xv[src + c];
        }
      }
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + shape_str(x.shape()));
  const std::size_t outer = prod(x.shape(), 0, axis), inner = prod(x.shape(), axis + 1, x.rank());
  const std::size_t src_n = x.dim(axis);
  Shape s = x.shape();
  s[axis] = length;
  Tensor<T> out(s);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * src_n + start) * inner), length * inner,
                out.data.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return make_result<T>(std::move(out), {x}, [outer, inner, src_n, start, length](Node<T>& self) {
    auto& px = parent(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < length * inner; ++i)
        px.grad[(o * src_n + start) * inner + i] += self.grad[o * length * inner + i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) throw_shape_error("concat", ref, p.shape());
    a[axis] = b[axis] = 0;
    if (a != b) throw_shape_error("concat", ref, p.shape());
    sizes.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  const std::size_t outer = prod(ref, 0, axis), inner = prod(ref, axis + 1, ref.size());
  Shape s = ref;
  s[axis] = total;
  Tensor<T> out(s);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].value().data;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * sizes[pi] * inner), sizes[pi] * inner,
                  out.data.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += sizes[pi];
  }
  return make_result<T>(std::move(out), parts, [outer, inner, total, sizes](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < sizes[pi] * inner; ++i)
            p.grad[o * sizes[pi] * inner + i] += self.grad[(o * total + offset) * inner + i];
      }
      offset += sizes[pi];
    }
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> check = order;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i)
    if (check[i] != i || check.size() != r) throw ShapeError("permute: invalid axis order for " + shape_str(x.shape()));
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  Shape s(r);
  for (std::size_t i = 0; i < r; ++i) s[i] = x.dim(order[i]);
  // map[out_index] = in_index
  std::vector<std::size_t> map(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[order[i]];
    map[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < s[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out(s);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < map.size(); ++o) out.data[o] = xv[map[o]];
  return make_result<T>(std::move(out), {x}, [map = std::move(map)](Node<T>& self) {
    auto& px = parent(self, 0);
    for (std::size_t o = 0; o < map.size(); ++o) px.grad[map[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, const Shape& shape) {
  if (numel(shape) != x.size()) throw_shape_error("reshape", x.shape(), shape);
  Tensor<T> out(shape, x.value().data);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
  });
}

template <typename T>
Var<T> expand(const Var<T>& v, const Shape& lead) {
  Shape s = lead;
  s.insert(s.end(), v.shape().begin(), v.shape().end());
  const std::size_t inner = v.size(), outer = numel(lead);
  Tensor<T> out(s);
  const auto& vv = v.value().data;
  for (std::size_t o = 0; o < outer; ++o) std::copy(vv.begin(), vv.end(), out.data.begin() + static_cast<std::ptrdiff_t>(o * inner));
  return make_result<T>(std::move(out), {v}, [outer, inner](Node<T>& self) {
    auto& pv = parent(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) pv.grad[i] += self.grad[o * inner + i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows, std::size_t rows_per_batch) {
  if (x.rank() != 3) throw ShapeError("gather_rows: expected (B, L, D), got " + shape_str(x.shape()));
  const std::size_t nb = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (rows.size() != nb * rows_per_batch)
    throw ShapeError("gather_rows: " + std::to_string(rows.size()) + " indices for batch " + std::to_string(nb) +
                     " x " + std::to_string(rows_per_batch));
  for (auto r : rows)
    if (r >= len) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  Tensor<T> out({nb, rows_per_batch, d});
  const auto& xv = x.value().data;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t j = 0; j < rows_per_batch; ++j)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * len + rows[b * rows_per_batch + j]) * d), d,
                  out.data.begin() + static_cast<std::ptrdiff_t>((b * rows_per_batch + j) * d));
  return make_result<T>(std::move(out), {x}, [rows, nb, len, d, rows_per_batch](Node<T>& self) {
    auto& px = parent(self, 0);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t j = 0; j < rows_per_batch; ++j) {
        const std::size_t dst = (b * len + rows[b * rows_per_batch + j]) * d;
        const std::size_t src = (b * rows_per_batch + j) * d;
        for (std::size_t i = 0; i < d; ++i) px.grad[dst + i] += self.grad[src + i];
      }
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (auto v : x.value().data) s += v;
  return make_result<T>(Tensor<T>({}, std::vector<T>{s}), {x}, [](Node<T>& self) {
    auto& px = parent(self, 0);
    for (auto& g : px.grad) g += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const std::size_t outer = prod(x.shape(), 0, axis), inner = prod(x.shape(), axis + 1, x.rank()), n = x.dim(axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(s);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] += xv[(o * n + a) * inner + i];
  return make_result<T>(std::move(out), {x}, [outer, inner, n](Node<T>& self) {
    auto& px = parent(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t i = 0; i < inner; ++i) px.grad[(o * n + a) * inner + i] += self.grad[o * inner + i];
  });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
  if (axis >= x.rank() || x.dim(axis) == 0) throw ShapeError("mean_axis: bad axis for " + shape_str(x.shape()));
  return scale(sum_axis(x, axis), T(1) / T(x.dim(axis)));
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expected (B, C), got " + shape_str(logits.shape()));
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  if (labels.size() != nb)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(nb));
  if (nb == 0) throw ContractError("softmax_cross_entropy: empty batch");
  std::vector<T> prob(nb * nc);
  const auto& z = logits.value().data;
  T loss = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    if (labels[b] >= nc)
      throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                          std::to_string(nc) + ")");
    const T* row = z.data() + b * nc;
    const T mx = *std::max_element(row, row + nc);
    T se = 0;
    for (std::size_t c = 0; c < nc; ++c) se += std::exp(row[c] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t c = 0; c < nc; ++c) prob[b * nc + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= T(nb);
  return make_result<T>(Tensor<T>({}, std::vector<T>{loss}), {logits},
                        [prob = std::move(prob), labels, nb, nc](Node<T>& self) {
                          auto& pl = parent(self, 0);
                          const T g = self.grad[0] / T(nb);
                          for (std::size_t b = 0; b < nb; ++b)
                            for (std::size_t c = 0; c < nc; ++c)
                              pl.grad[b * nc + c] += g * (prob[b * nc + c] - (c == labels[b] ? T(1) : T(0)));
                        });
}

template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target, const Tensor<T>* mask) {
  if (pred.shape() != target.shape()) throw_shape_error("mse", pred.shape(), target.shape());
  if (mask && mask->shape != pred.shape()) throw_shape_error("mse", pred.shape(), mask->shape);
  const auto& p = pred.value().data;
  const auto& t = target.value().data;
  T weight = 0, acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T m = mask ? mask->data[i] : T(1);
    weight += m;
    acc += m * (p[i] - t[i]) * (p[i] - t[i]);
  }
  const T loss = weight > T(0) ? acc / weight : T(0);
  Buffer<T> w;
  if (mask) w = mask->data;
  return make_result<T>(Tensor<T>({}, std::vector<T>{loss}), {pred, target},
                        [weight, w = std::move(w)](Node<T>& self) {
                          if (!(weight > T(0))) return;
                          auto& pp = *self.parents[0];
                          auto& pt = *self.parents[1];
                          const T g = self.grad[0] * T(2) / weight;
                          if (pp.requires_grad) pp.ensure_grad();
                          if (pt.requires_grad) pt.ensure_grad();
                          for (std::size_t i = 0; i < pp.value.size(); ++i) {
                            const T m = w.empty() ? T(1) : w[i];
                            const T d = g * m * (pp.value.data[i] - pt.value.data[i]);
                            if (pp.requires_grad) pp.grad[i] += d;
                            if (pt.requires_grad) pt.grad[i] -= d;
                          }
                        });
}

#define NETMAMBA_INSTANTIATE(T)                                                                           \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> scale(const Var<T>&, T);                                                                 \
  template Var<T> neg(const Var<T>&);                                                                      \
  template Var<T> exp(const Var<T>&);                                                                      \
  template Var<T> silu(const Var<T>&);                                                                     \
  template Var<T> softplus(const Var<T>&);                                                                 \
  template Var<T> rmsnorm(const Var<T>&, const Var<T>&, T);                                                \
  template Var<T> layernorm(const Var<T>&, const Var<T>&, const Var<T>&, T);                               \
  template Var<T> causal_conv1d(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                             \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                         \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                                 \
  template Var<T> reshape(const Var<T>&, const Shape&);                                                    \
  template Var<T> expand(const Var<T>&, const Shape&);                                                     \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&, std::size_t);                \
  template Var<T> detach(const Var<T>&);                                                                   \
  template Var<T> sum(const Var<T>&);                                                                      \
  template Var<T> mean(const Var<T>&);                                                                     \
  template Var<T> sum_axis(const Var<T>&, std::size_t);                                                    \
  template Var<T> mean_axis(const Var<T>&, std::size_t);                                                   \
  template Var<T> softmax_cross_entropy(const Var<T>&, const std::vector<std::size_t>&);                   \
  template Var<T> mse(const Var<T>&, const Var<T>&, const Tensor<T>*);

NETMAMBA_INSTANTIATE(float)
NETMAMBA_INSTANTIATE(double)

#undef NETMAMBA_INSTANTIATE

}  // namespace netmamba::ad
