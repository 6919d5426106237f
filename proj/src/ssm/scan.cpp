// SPDX-License-Identifier: Apache-2.0
#include "ssm/scan.hpp"

#include <cmath>
#include <vector>

namespace netmamba::ssm {

using ad::Shape;
using ad::shape_str;
using ad::ShapeError;

namespace {

struct ScanDims {
  std::size_t nb, len, ch, ns;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& b_in) {
  expect(delta.rank() == 3 && A.rank() == 2 && b_in.rank() == 3, "discretize: expected delta (B,L,E), A (E,N), B (B,L,N)");
  const std::size_t nb = delta.dim(0), len = delta.dim(1), ch = delta.dim(2), ns = A.dim(1);
  expect(A.dim(0) == ch, "discretize: A " + shape_str(A.shape) + " does not match delta " + shape_str(delta.shape));
  expect(b_in.dim(0) == nb && b_in.dim(1) == len && b_in.dim(2) == ns,
         "discretize: B " + shape_str(b_in.shape) + " does not match delta " + shape_str(delta.shape));
  Discretized<T> out{Tensor<T>({nb, len, ch, ns}), Tensor<T>({nb, len, ch, ns})};
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t e = 0; e < ch; ++e) {
        const T d = delta[(b * len + t) * ch + e];
        const std::size_t base = ((b * len + t) * ch + e) * ns;
        for (std::size_t n = 0; n < ns; ++n) {
          out.a_bar[base + n] = std::exp(d * A[e * ns + n]);
          out.b_bar[base + n] = d * b_in[(b * len + t) * ns + n];
        }
      }
  return out;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c, const Tensor<T>& x) {
  expect(a_bar.rank() == 4 && a_bar.shape == b_bar.shape, "selective_scan: a_bar/b_bar must share a (B,L,E,N) shape");
  const std::size_t nb = a_bar.dim(0), len = a_bar.dim(1), ch = a_bar.dim(2), ns = a_bar.dim(3);
  expect(c.shape == Shape{nb, len, ns}, "selective_scan: C " + shape_str(c.shape) + " vs " + shape_str(a_bar.shape));
  expect(x.shape == Shape{nb, len, ch}, "selective_scan: x " + shape_str(x.shape) + " vs " + shape_str(a_bar.shape));
  Tensor<T> y({nb, len, ch});
  std::vector<T> h(ch * ns);
  for (std::size_t b = 0; b < nb; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < len; ++t) {
      const T* ct = c.data.data() + (b * len + t) * ns;
      for (std::size_t e = 0; e < ch; ++e) {
        const std::size_t base = ((b * len + t) * ch + e) * ns;
        const T xv = x[(b * len + t) * ch + e];
        T acc = 0;
        for (std::size_t n = 0; n < ns; ++n) {
          T& hn = h[e * ns + n];
          hn = a_bar[base + n] * hn + b_bar[base + n] * xv;
          acc += ct[n] * hn;
        }
        y[(b * len + t) * ch + e] = acc;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ssm_conv_oracle(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c, const Tensor<T>& x) {
  expect(a_bar.rank() == 4 && a_bar.shape == b_bar.shape, "ssm_conv_oracle: a_bar/b_bar must share a (B,L,E,N) shape");
  const std::size_t nb = a_bar.dim(0), len = a_bar.dim(1), ch = a_bar.dim(2), ns = a_bar.dim(3);
  expect(c.shape == Shape{nb, len, ns} && x.shape == Shape{nb, len, ch}, "ssm_conv_oracle: inconsistent shapes");
  const std::size_t step4 = ch * ns;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 1; t < len; ++t) {
      for (std::size_t i = 0; i < step4; ++i) {
        const std::size_t cur = (b * len + t) * step4 + i, first = b * len * step4 + i;
        if (a_bar[cur] != a_bar[first] || b_bar[cur] != b_bar[first])
          throw ad::ContractError("ssm_conv_oracle: parameters vary over the sequence axis");
      }
      for (std::size_t n = 0; n < ns; ++n)
        if (c[(b * len + t) * ns + n] != c[b * len * ns + n])
          throw ad::ContractError("ssm_conv_oracle: C varies over the sequence axis");
    }

  Tensor<T> y({nb, len, ch});
  std::vector<T> kernel(len);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t e = 0; e < ch; ++e) {
      const T* ab = a_bar.data.data() + (b * len * ch + e) * ns;
      const T* bb = b_bar.data.data() + (b * len * ch + e) * ns;
      const T* cc = c.data.data() + b * len * ns;
      for (std::size_t j = 0; j < len; ++j) {
        T k = 0;
        for (std::size_t n = 0; n < ns; ++n) k += cc[n] * std::pow(ab[n], T(j)) * bb[n];
        kernel[j] = k;
      }
      for (std::size_t t = 0; t < len; ++t) {
        T acc = 0;
        for (std::size_t j = 0; j <= t; ++j) acc += kernel[j] * x[(b * len + t - j) * ch + e];
        y[(b * len + t) * ch + e] = acc;
      }
    }
  return y;
}

template <typename T>
Var<T> selective_scan_fused(const Var<T>& delta, const Var<T>& A, const Var<T>& b_in, const Var<T>& c,
                            const Var<T>& x) {
  expect(delta.rank() == 3 && A.rank() == 2, "selective_scan: expected delta (B,L,E) and A (E,N)");
  const ScanDims dims{delta.dim(0), delta.dim(1), delta.dim(2), A.dim(1)};
  const auto [nb, len, ch, ns] = dims;
  expect(A.dim(0) == ch, "selective_scan: A " + shape_str(A.shape()) + " vs delta " + shape_str(delta.shape()));
  expect(b_in.shape() == Shape{nb, len, ns}, "selective_scan: B " + shape_str(b_in.shape()));
  expect(c.shape() == Shape{nb, len, ns}, "selective_scan: C " + shape_str(c.shape()));
  expect(x.shape() == Shape{nb, len, ch}, "selective_scan: x " + shape_str(x.shape()));

  const auto& dv = delta.value().data;
  const auto& av = A.value().data;
  const auto& bv = b_in.value().data;
  const auto& cv = c.value().data;
  const auto& xv = x.value().data;
  Tensor<T> y({nb, len, ch});
  std::vector<T> h(ch * ns);
  for (std::size_t b = 0; b < nb; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = b * len + t;
      const T* bt = bv.data() + row * ns;
      const T* ct = cv.data() + row * ns;
      for (std::size_t e = 0; e < ch; ++e) {
        const T d = dv[row * ch + e];
        const T dx = d * xv[row * ch + e];
        const T* ae = av.data() + e * ns;
        T* he = h.data() + e * ns;
        T acc = 0;
        for (std::size_t n = 0; n < ns; ++n) {
          he[n] = std::exp(d * ae[n]) * he[n] + dx * bt[n];
          acc += ct[n] * he[n];
        }
        y[row * ch + e] = acc;
      }
    }
  }

  return ad::make_result<T>(std::move(y), {delta, A, b_in, c, x}, [dims](ad::Node<T>& self) {
    const auto [nb, len, ch, ns] = dims;
    auto& pd = *self.parents[0];
    auto& pa = *self.parents[1];
    auto& pb = *self.parents[2];
    auto& pc = *self.parents[3];
    auto& px = *self.parents[4];
    const auto& dv = pd.value.data;
    const auto& av = pa.value.data;
    const auto& bv = pb.value.data;
    const auto& cv = pc.value.data;
    const auto& xv = px.value.data;
    // Gradients are accumulated into local buffers regardless of which
    // parents require them; the scan itself dominates the cost.
    std::vector<T> gd(dv.size()), ga(av.size()), gb(bv.size()), gc(cv.size()), gx(xv.size());
    std::vector<T> states(len * ch * ns), abar(len * ch * ns), gh(ch * ns);
    for (std::size_t b = 0; b < nb; ++b) {
      // Recompute hidden states for this batch element.
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t row = b * len + t;
        const T* bt = bv.data() + row * ns;
        for (std::size_t e = 0; e < ch; ++e) {
          const T d = dv[row * ch + e];
          const T dx = d * xv[row * ch + e];
          const std::size_t base = (t * ch + e) * ns;
          for (std::size_t n = 0; n < ns; ++n) {
            const T a = std::exp(d * av[e * ns + n]);
            const T prev = t ? states[base - ch * ns + n] : T(0);
            abar[base + n] = a;
            states[base + n] = a * prev + dx * bt[n];
          }
        }
      }
      std::fill(gh.begin(), gh.end(), T(0));
      for (std::size_t t = len; t-- > 0;) {
        const std::size_t row = b * len + t;
        const T* bt = bv.data() + row * ns;
        const T* ct = cv.data() + row * ns;
        T* gbt = gb.data() + row * ns;
        T* gct = gc.data() + row * ns;
        for (std::size_t e = 0; e < ch; ++e) {
          const T gy = self.grad[row * ch + e];
          const T d = dv[row * ch + e];
          const T xval = xv[row * ch + e];
          const std::size_t base = (t * ch + e) * ns;
          T gdelta = 0, gxval = 0;
          for (std::size_t n = 0; n < ns; ++n) {
            T& g = gh[e * ns + n];
            g += gy * ct[n];
            gct[n] += gy * states[base + n];
            const T prev = t ? states[base - ch * ns + n] : T(0);
            const T a = abar[base + n];
            const T g_abar = g * prev;
            const T aen = av[e * ns + n];
            gdelta += g_abar * a * aen + g * xval * bt[n];
            ga[e * ns + n] += g_abar * a * d;
            gbt[n] += g * d * xval;
            gxval += g * d * bt[n];
            g *= a;
          }
          gd[row * ch + e] += gdelta;
          gx[row * ch + e] += gxval;
        }
      }
    }
    auto flush = [](ad::Node<T>& p, const std::vector<T>& g) {
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    };
    flush(pd, gd);
    flush(pa, ga);
    flush(pb, gb);
    flush(pc, gc);
    flush(px, gx);
  });
}

#define NETMAMBA_INSTANTIATE(T)                                                                            \
  template Discretized<T> discretize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> ssm_conv_oracle(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Var<T> selective_scan_fused(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);

NETMAMBA_INSTANTIATE(float)
NETMAMBA_INSTANTIATE(double)

#undef NETMAMBA_INSTANTIATE

}  // namespace netmamba::ssm
