// SPDX-License-Identifier: Apache-2.0
// Central finite-difference oracle for gradient tests. Independent of the
// backward rules: it only re-evaluates the forward function.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autodiff/ops.hpp"
#include "autodiff/tensor.hpp"

namespace netmamba::testing {

using ad::Shape;
using ad::Tensor;
using ad::Var;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param index>[<element>]"
  std::size_t checked = 0;
};

/// Central differences of `loss_fn` with respect to every element of `params`.
inline std::vector<std::vector<double>> numeric_gradients(const std::function<Var<double>()>& loss_fn,
                                                          std::vector<Var<double>> params, double h = 1e-4) {
  ad::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  for (auto& p : params) {
    auto& data = p.mutable_value().data;
    std::vector<double> g(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = loss_fn().item();
      data[i] = orig - h;
      const double fm = loss_fn().item();
      data[i] = orig;
      g[i] = (fp - fm) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// max |analytic - numeric| / (|numeric| + 1e-8) over all elements.
inline GradCheckResult compare_gradients(const std::vector<std::vector<double>>& analytic,
                                         const std::vector<std::vector<double>>& numeric) {
  GradCheckResult r;
  for (std::size_t pi = 0; pi < numeric.size(); ++pi)
    for (std::size_t i = 0; i < numeric[pi].size(); ++i) {
      const double rel = std::abs(analytic[pi][i] - numeric[pi][i]) / (std::abs(numeric[pi][i]) + 1e-8);
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  return r;
}

template <typename T>
std::vector<std::vector<double>> analytic_gradients(const std::function<Var<T>()>& loss_fn, std::vector<Var<T>> params) {
  for (auto& p : params) p.zero_grad();
  ad::backward(loss_fn());
  std::vector<std::vector<double>> out;
  for (auto& p : params) {
    if (p.has_grad())
      out.emplace_back(p.grad().begin(), p.grad().end());
    else
      out.emplace_back(p.size(), 0.0);
  }
  return out;
}

/// Compares analytic gradients of `loss_fn` with respect to `params` against
/// central differences with step `h`.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss_fn, std::vector<Var<double>> params,
                                  double h = 1e-4) {
  auto analytic = analytic_gradients<double>(loss_fn, params);
  return compare_gradients(analytic, numeric_gradients(loss_fn, params, h));
}

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

inline Var<double> random_param(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Var<double>::parameter(random_tensor(shape, rng, lo, hi));
}

/// sum(out * weights) with fixed random weights, so every output element
/// contributes with an O(1) coefficient.
inline Var<double> project(const Var<double>& out, const Tensor<double>& weights) {
  return ad::sum(ad::mul(out, Var<double>::constant(weights)));
}

}  // namespace netmamba::testing
