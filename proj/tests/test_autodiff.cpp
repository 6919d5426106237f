// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "autodiff/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace netmamba;
using namespace netmamba::testing;
using ad::Shape;
using ad::Tensor;
using ad::Var;
using V = Var<double>;

namespace {

constexpr double kPrimitiveTol = 1e-6;

void check_primitive(const char* name, const std::function<V()>& f, std::vector<V> params) {
  const auto r = grad_check(f, std::move(params));
  INFO(name << " worst " << r.worst << " rel " << r.max_rel_error);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < kPrimitiveTol);
}

}  // namespace

TEST_CASE("forward values of scalar primitives") {
  auto x = V::constant({3}, {0.0, 25.0, -3.0});
  auto s = ad::silu(x);
  CHECK(s.data()[0] == 0.0);
  CHECK(s.data()[2] == doctest::Approx(-3.0 / (1.0 + std::exp(3.0))));
  auto sp = ad::softplus(x);
  CHECK(sp.data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(sp.data()[1] == 25.0);  // linear branch above 20
  CHECK(sp.data()[2] == doctest::Approx(std::log1p(std::exp(-3.0))));
}

TEST_CASE("causal conv with identity kernel reproduces the sequence") {
  std::mt19937_64 rng(1);
  auto x = V::constant(random_tensor({2, 7, 3}, rng));
  Tensor<double> w({3, 4});
  for (std::size_t c = 0; c < 3; ++c) w[c * 4] = 1.0;
  auto y = ad::causal_conv1d(x, V::constant(w), V::constant(Tensor<double>({3})));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("causal conv only looks backwards") {
  // kernel (0,1): y[t] = x[t-1]
  auto x = V::constant({1, 4, 1}, {1, 2, 3, 4});
  auto y = ad::causal_conv1d(x, V::constant({1, 2}, {0.0, 1.0}), V::constant({1}, {0.5}));
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0.5, 1.5, 2.5, 3.5});
}

TEST_CASE("rmsnorm forward") {
  auto x = V::constant({1, 2}, {3.0, 4.0});
  auto g = V::constant({2}, {1.0, 2.0});
  auto y = ad::rmsnorm(x, g, 1e-12);
  const double rms = std::sqrt(12.5);
  CHECK(y.data()[0] == doctest::Approx(3.0 / rms));
  CHECK(y.data()[1] == doctest::Approx(8.0 / rms));
}

TEST_CASE("finite-difference check of every primitive") {
  std::mt19937_64 rng(42);
  SUBCASE("matmul") {
    auto a = random_param({2, 3, 4}, rng), w = random_param({4, 5}, rng);
    auto wt = random_tensor({2, 3, 5}, rng);
    check_primitive("matmul", [&] { return project(ad::matmul(a, w), wt); }, {a, w});
  }
  SUBCASE("add broadcast") {
    auto a = random_param({2, 3, 4}, rng), b = random_param({3, 4}, rng);
    auto wt = random_tensor({2, 3, 4}, rng);
    check_primitive("add", [&] { return project(ad::add(a, b), wt); }, {a, b});
  }
  SUBCASE("sub") {
    auto a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
    auto wt = random_tensor({3, 4}, rng);
    check_primitive("sub", [&] { return project(ad::sub(a, b), wt); }, {a, b});
  }
  SUBCASE("mul broadcast") {
    auto a = random_param({2, 5}, rng), b = random_param({5}, rng);
    auto wt = random_tensor({2, 5}, rng);
    check_primitive("mul", [&] { return project(ad::mul(a, b), wt); }, {a, b});
  }
  SUBCASE("scale and neg") {
    auto a = random_param({6}, rng);
    auto wt = random_tensor({6}, rng);
    check_primitive("scale", [&] { return project(ad::neg(ad::scale(a, 1.7)), wt); }, {a});
  }
  SUBCASE("exp") {
    auto a = random_param({6}, rng);
    auto wt = random_tensor({6}, rng);
    check_primitive("exp", [&] { return project(ad::exp(a), wt); }, {a});
  }
  SUBCASE("silu") {
    auto a = random_param({8}, rng, -3, 3);
    auto wt = random_tensor({8}, rng);
    check_primitive("silu", [&] { return project(ad::silu(a), wt); }, {a});
  }
  SUBCASE("softplus") {
    auto a = random_param({8}, rng, -5, 5);
    auto wt = random_tensor({8}, rng);
    check_primitive("softplus", [&] { return project(ad::softplus(a), wt); }, {a});
  }
  SUBCASE("rmsnorm") {
    auto x = random_param({3, 6}, rng), g = random_param({6}, rng, 0.5, 1.5);
    auto wt = random_tensor({3, 6}, rng);
    check_primitive("rmsnorm", [&] { return project(ad::rmsnorm(x, g, 1e-5), wt); }, {x, g});
  }
  SUBCASE("layernorm") {
    auto x = random_param({3, 6}, rng), g = random_param({6}, rng, 0.5, 1.5), b = random_param({6}, rng);
    auto wt = random_tensor({3, 6}, rng);
    check_primitive("layernorm", [&] { return project(ad::layernorm(x, g, b, 1e-5), wt); }, {x, g, b});
  }
  SUBCASE("causal_conv1d") {
    auto x = random_param({2, 6, 3}, rng), w = random_param({3, 4}, rng), b = random_param({3}, rng);
    auto wt = random_tensor({2, 6, 3}, rng);
    check_primitive("causal_conv1d", [&] { return project(ad::causal_conv1d(x, w, b), wt); }, {x, w, b});
  }
  SUBCASE("slice") {
    auto x = random_param({2, 5, 3}, rng);
    auto wt = random_tensor({2, 2, 3}, rng);
    check_primitive("slice", [&] { return project(ad::slice(x, 1, 2, 2), wt); }, {x});
  }
  SUBCASE("concat") {
    auto a = random_param({2, 2, 3}, rng), b = random_param({2, 1, 3}, rng);
    auto wt = random_tensor({2, 3, 3}, rng);
    check_primitive("concat", [&] { return project(ad::concat<double>({a, b}, 1), wt); }, {a, b});
  }
  SUBCASE("permute") {
    auto x = random_param({2, 3, 4}, rng);
    auto wt = random_tensor({4, 2, 3}, rng);
    check_primitive("permute", [&] { return project(ad::permute(x, {2, 0, 1}), wt); }, {x});
  }
  SUBCASE("reshape and expand") {
    auto v = random_param({3}, rng);
    auto wt = random_tensor({6, 3}, rng);
    check_primitive("expand", [&] { return project(ad::reshape(ad::expand(v, {2, 3}), {6, 3}), wt); }, {v});
  }
  SUBCASE("gather_rows") {
    auto x = random_param({2, 4, 3}, rng);
    auto wt = random_tensor({2, 3, 3}, rng);
    const std::vector<std::size_t> rows{3, 0, 3, 1, 1, 2};
    check_primitive("gather_rows", [&] { return project(ad::gather_rows(x, rows, 3), wt); }, {x});
  }
  SUBCASE("sum/mean over axes") {
    auto x = random_param({2, 3, 4}, rng);
    auto w1 = random_tensor({2, 4}, rng), w2 = random_tensor({2, 3}, rng);
    check_primitive("sum_axis", [&] {
      return ad::add(project(ad::sum_axis(x, 1), w1), ad::add(project(ad::mean_axis(x, 2), w2), ad::mean(x)));
    }, {x});
  }
  SUBCASE("softmax_cross_entropy") {
    auto z = random_param({3, 5}, rng, -2, 2);
    check_primitive("softmax_cross_entropy", [&] { return ad::softmax_cross_entropy(z, {0, 4, 2}); }, {z});
  }
  SUBCASE("mse with mask") {
    auto p = random_param({4, 3}, rng), t = random_param({4, 3}, rng);
    Tensor<double> mask({4, 3});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 0.0 : 1.0;
    check_primitive("mse", [&] { return ad::mse(p, t, &mask); }, {p, t});
  }
}

TEST_CASE("backward of sum(x W) gives the outer-product structure") {
  auto x = V::constant({1, 3}, {1.0, 2.0, 3.0});
  std::mt19937_64 rng(3);
  auto W = random_param({3, 2}, rng);
  ad::backward(ad::sum(ad::matmul(x, W)));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t n = 0; n < 2; ++n) CHECK(W.grad()[k * 2 + n] == x.data()[k]);
}

TEST_CASE("repeated backward calls accumulate exactly") {
  std::mt19937_64 rng(4);
  auto a = random_param({2, 3}, rng), w = random_param({3, 3}, rng);
  auto loss = ad::sum(ad::silu(ad::matmul(a, w)));
  ad::backward(loss);
  std::vector<double> once(w.grad().begin(), w.grad().end());
  ad::backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("backward requires a scalar loss") {
  std::mt19937_64 rng(5);
  auto a = random_param({2, 2}, rng);
  CHECK_THROWS_AS(ad::backward(ad::exp(a)), ad::ContractError);
}

TEST_CASE("shape errors name both shapes") {
  auto a = V::constant(Tensor<double>({2, 3})), b = V::constant(Tensor<double>({4, 5}));
  try {
    (void)ad::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 5)") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ad::add(a, b), ad::ShapeError);
  CHECK_THROWS_AS((void)ad::softmax_cross_entropy(a, {0, 3}), ad::ContractError);
}

TEST_CASE("broadcast gradient equals the summation loop oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t outer = 1 + rng() % 5, inner = 1 + rng() % 4;
    auto a = random_param({outer, inner}, rng), b = random_param({inner}, rng);
    auto wt = random_tensor({outer, inner}, rng);
    ad::backward(project(ad::add(a, b), wt));
    for (std::size_t i = 0; i < inner; ++i) {
      double expect = 0;
      for (std::size_t o = 0; o < outer; ++o) expect += wt[o * inner + i];
      CHECK(b.grad()[i] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("no-grad mode records nothing") {
  std::mt19937_64 rng(7);
  auto a = random_param({2, 2}, rng);
  ad::NoGradGuard g;
  auto y = ad::exp(a);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("forward evaluation is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(8);
    auto a = Var<float>::constant(random_tensor<float>({4, 16}, rng));
    auto w = Var<float>::constant(random_tensor<float>({16, 8}, rng));
    auto y = ad::softplus(ad::matmul(a, w));
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}
