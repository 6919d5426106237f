// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "autodiff/ops.hpp"
#include "errors.hpp"
#include "train/bench.hpp"
#include "train/metrics.hpp"
#include "train/optim.hpp"
#include "train/synthetic.hpp"
#include "train/trainer.hpp"

using namespace netmamba;
using namespace netmamba::train;
using ad::Tensor;
using ad::Var;

namespace {

Var<float> scalar_param(float v, const std::string& name = "theta") {
  return Var<float>::parameter(Tensor<float>({1}, std::vector<float>{v}), name);
}

traffic::ReprConfig small_repr() {
  traffic::ReprConfig r;
  r.packets_per_flow = 2;
  r.header_bytes = 40;
  r.payload_bytes = 8;
  r.stride_len = 4;
  return r;
}

model::ModelConfig small_model(std::size_t classes) {
  model::ModelConfig c;
  c.stride_len = 4;
  c.num_strides = small_repr().num_strides();
  c.d_enc = 16;
  c.e_enc = 32;
  c.depth_enc = 1;
  c.d_dec = 8;
  c.e_dec = 16;
  c.depth_dec = 1;
  c.d_state = 4;
  c.dt_rank = 4;
  c.mask_ratio = 0.75;
  c.num_classes = classes;
  return c;
}

SampleSet synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed, bool labeled = true) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.per_class = per_class;
  s.repr = small_repr();
  s.seed = seed;
  s.labeled = labeled;
  return synthetic_dataset(s);
}

std::vector<std::vector<float>> values(const NamedParams<float>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& [n, v] : params) out.emplace_back(v.data().begin(), v.data().end());
  return out;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("nm_train_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("AdamW: zero gradient without decay leaves parameters unchanged") {
  auto w = Var<float>::parameter(Tensor<float>({2, 2}, std::vector<float>{1, -2, 3, 0.5f}), "w");
  AdamW opt({{"w", w}}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  std::fill(w.mutable_grad().begin(), w.mutable_grad().end(), 0.0f);
  opt.step(1e-2);
  CHECK(std::vector<float>(w.data().begin(), w.data().end()) == std::vector<float>{1, -2, 3, 0.5f});
}

TEST_CASE("AdamW: first step with unit gradient moves by lr") {
  auto w = Var<float>::parameter(Tensor<float>({3}, std::vector<float>{0, 1, 2}), "w");
  AdamW opt({{"w", w}}, AdamWConfig{});
  std::fill(w.mutable_grad().begin(), w.mutable_grad().end(), 1.0f);
  opt.step(1e-3);
  CHECK(w.data()[0] == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(w.data()[2] == doctest::Approx(2 - 1e-3).epsilon(1e-6));
}

TEST_CASE("AdamW: quadratic bowl against a scalar simulation") {
  auto theta = scalar_param(1.0f);
  AdamW opt({{"theta", theta}}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  double t = 1.0, m = 0, v = 0;
  for (int k = 1; k <= 200; ++k) {
    opt.zero_grad();
    ad::backward(ad::sum(ad::mul(theta, theta)));
    opt.step(0.1);
    const double g = 2 * t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    t -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
  }
  CHECK(std::abs(theta.data()[0]) < 1e-2);
  CHECK(std::abs(t) < 1e-2);
  CHECK(theta.data()[0] == doctest::Approx(t).epsilon(1e-3));
}

TEST_CASE("AdamW: decoupled decay and non-finite gradient fault") {
  auto w = Var<float>::parameter(Tensor<float>({1, 1}, std::vector<float>{2.0f}), "enc.0.in_x");
  auto a = Var<float>::parameter(Tensor<float>({1, 1}, std::vector<float>{2.0f}), "enc.0.a_log");
  AdamW opt({{"enc.0.in_x", w}, {"enc.0.a_log", a}}, AdamWConfig{0.9, 0.999, 1e-8, 0.5});
  w.mutable_grad()[0] = 0;
  a.mutable_grad()[0] = 0;
  opt.step(0.1);
  CHECK(w.data()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK(a.data()[0] == 2.0f);
  CHECK(decays("head.w1", 2));
  CHECK_FALSE(decays("head.b1", 1));
  CHECK_FALSE(decays("dec.1.a_log", 2));

  a.mutable_grad()[0] = std::nanf("");
  const float before = w.data()[0];
  try {
    opt.step(0.1);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(std::string(e.what()).find("enc.0.a_log") != std::string::npos);
  }
  CHECK(w.data()[0] == before);
}

TEST_CASE("Schedule: warmup then monotone cosine decay") {
  const Schedule s{1e-3, 1000, 0.05, false};
  CHECK(s.warmup_steps() == 50);
  CHECK(s.lr(0) == doctest::Approx(1e-3 / 50));
  CHECK(s.lr(49) == doctest::Approx(1e-3));
  for (std::size_t k = 50; k < 1000; ++k) CHECK(s.lr(k + 1) <= s.lr(k));
  CHECK(s.lr(999) >= 0);
  const Schedule c{2e-3, 100, 0.05, true};
  CHECK(c.lr(0) == 2e-3);
  CHECK(c.lr(99) == 2e-3);
}

TEST_CASE("clip_grad_norm rescales to the limit") {
  auto a = scalar_param(0, "a");
  auto b = scalar_param(0, "b");
  a.mutable_grad()[0] = 3;
  b.mutable_grad()[0] = 4;
  const NamedParams<float> ps{{"a", a}, {"b", b}};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-5));
  CHECK(b.grad()[0] == doctest::Approx(0.8).epsilon(1e-5));
}

TEST_CASE("metrics: perfect, hand example, single class") {
  const auto perfect = compute_metrics({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto hand = compute_metrics({0, 0, 0, 1}, {0, 0, 0, 0}, 2);
  CHECK(hand.accuracy == doctest::Approx(0.75));
  CHECK(hand.precision == doctest::Approx(0.5625));
  CHECK(hand.recall == doctest::Approx(0.75));
  CHECK(hand.f1 == doctest::Approx(0.6429).epsilon(1e-4));
  CHECK(hand.confusion[1][0] == 1);

  const auto single = compute_metrics({2, 2, 2}, {2, 1, 2}, 3);
  CHECK(single.accuracy == doctest::Approx(single.recall));
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t row = 0;
    for (auto v : single.confusion[t]) row += v;
    CHECK(row == single.support[t]);
  }
}

TEST_CASE("synthetic generator: determinism, labels and layout") {
  const auto a = synthetic(3, 5, 1), b = synthetic(3, 5, 1), c = synthetic(3, 5, 2);
  CHECK(a.bytes == b.bytes);
  CHECK(a.bytes != c.bytes);
  CHECK(a.size() == 15);
  CHECK(a.flow_bytes() == 96);
  CHECK(a.labels[0] == 0);
  CHECK(a.labels[14] == 2);
  CHECK(a.sample(0)[0] == 0x45);
  CHECK(a.sample(0)[12] == 0);  // anonymized address
  // same class shares the server port; different classes differ
  const auto port = [&](std::size_t i) { return (a.sample(i)[22] << 8) | a.sample(i)[23]; };
  CHECK(port(0) == port(1));
  CHECK(port(0) != port(5));
  CHECK(synthetic(2, 3, 0, false).labels[0] == traffic::kUnlabeled);
}

TEST_CASE("pretrain: deterministic logs, CSV output, empty dataset") {
  const auto data = synthetic(3, 10, 4, false);
  PretrainOptions po;
  po.batch = 4;
  po.steps = 6;
  po.log_every = 2;
  po.seed = 9;
  po.out_dir = temp_dir("pre");
  model::NetMamba<float> m1(small_model(3), 1), m2(small_model(3), 1);
  const auto r1 = pretrain(m1, data, po);
  po.out_dir.clear();
  const auto r2 = pretrain(m2, data, po);
  REQUIRE(r1.per_step.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r1.per_step[i].loss == r2.per_step[i].loss);
  CHECK(r1.log.size() == 3);

  const auto dir = temp_dir("pre");
  po.out_dir = dir;
  model::NetMamba<float> m3(small_model(3), 1);
  pretrain(m3, data, po);
  std::ifstream csv(dir / "loss_log.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,loss,lr");
  CHECK(std::filesystem::exists(dir / "pretrain_last.ckpt"));
  CHECK(std::filesystem::exists(dir / "pretrain_best.ckpt"));
  std::filesystem::remove_all(dir);

  SampleSet empty = data.select({});
  CHECK_THROWS_AS(pretrain(m3, empty, po), ConfigError);
}

TEST_CASE("pretrain: resume from a checkpoint matches an uninterrupted run") {
  const auto data = synthetic(3, 10, 4, false);
  PretrainOptions po;
  po.batch = 4;
  po.steps = 8;
  po.seed = 21;
  po.log_every = 4;
  model::NetMamba<float> full(small_model(3), 3);
  const auto straight = pretrain(full, data, po);

  model::NetMamba<float> first(small_model(3), 3);
  const auto dir = temp_dir("resume");
  po.stop_after = 5;
  po.out_dir = dir;
  const auto part1 = pretrain(first, data, po);
  const auto ck = model::load_checkpoint(dir / "pretrain_last.ckpt");
  CHECK(ck.meta["step"] == 5);

  model::NetMamba<float> resumed(small_model(3), 777);  // different init, overwritten by load
  resumed.load(ck);
  po.stop_after = 0;
  po.out_dir.clear();
  const auto part2 = pretrain(resumed, data, po, &ck);
  REQUIRE(part2.per_step.size() == 3);
  for (std::size_t i = 0; i < 5; ++i) CHECK(part1.per_step[i].loss == straight.per_step[i].loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(part2.per_step[i].loss == straight.per_step[5 + i].loss);
  const auto a = values(full.parameters()), b = values(resumed.parameters());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("finetune: separable two-class set reaches full train accuracy") {
  const auto data = synthetic(2, 12, 7);
  FinetuneOptions fo;
  fo.batch = 8;
  fo.lr = 2e-3;
  fo.seed = 1;
  fo.patience = 0;
  std::size_t reached = 0;
  for (std::size_t epochs : {25, 50, 100, 200}) {
    model::NetMamba<float> mm(small_model(2), 2);
    fo.epochs = epochs;
    (void)finetune(mm, data, data, data, fo);
    if (evaluate(mm, data).metrics.accuracy == 1.0) {
      reached = epochs;
      break;
    }
  }
  MESSAGE("full train accuracy after " << reached << " epochs");
  CHECK(reached > 0);
  CHECK(reached <= 200);
}

TEST_CASE("finetune: best-epoch rule, label validation, metrics file") {
  const auto data = synthetic(3, 20, 3);
  const auto split = traffic::split_indices(data.labels, {}, 2);
  const auto tr = data.select(split.train), va = data.select(split.val), te = data.select(split.test);
  model::NetMamba<float> m(small_model(3), 4);
  FinetuneOptions fo;
  fo.batch = 8;
  fo.epochs = 6;
  fo.out_dir = temp_dir("ft");
  const auto r = finetune(m, tr, va, te, fo);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.epochs)
    if (e.val_accuracy > best) best = e.val_accuracy, best_epoch = e.epoch;
  CHECK(r.best_epoch == best_epoch);
  CHECK(r.best_val_accuracy == best);
  // The restored model reproduces the best validation accuracy.
  CHECK(evaluate(m, va).metrics.accuracy == best);
  CHECK(std::filesystem::exists(fo.out_dir / "metrics.json"));
  CHECK(std::filesystem::exists(fo.out_dir / "finetune_best.ckpt"));
  std::filesystem::remove_all(fo.out_dir);

  SampleSet bad = tr;
  bad.labels[2] = 7;
  fo.out_dir.clear();
  try {
    finetune(m, bad, va, te, fo);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
  }
}

TEST_CASE("evaluate is deterministic") {
  const auto data = synthetic(3, 6, 5);
  const model::NetMamba<float> m(small_model(3), 8);
  const auto a = evaluate(m, data), b = evaluate(m, data, 4);
  CHECK(a.predictions == b.predictions);
  CHECK(a.metrics.f1 == b.metrics.f1);
}

TEST_CASE("bench: CSV header and scaling fit") {
  CHECK(scaling_exponent({100, 200, 400}, {1, 2, 4}) == doctest::Approx(1.0));
  CHECK(scaling_exponent({100, 200, 400}, {1, 4, 16}) == doctest::Approx(2.0));
  const model::NetMamba<float> m(small_model(2), 1);
  BenchOptions bo;
  bo.batches = {1, 2};
  bo.lengths = {16, 32};
  const auto rows = bench(m, bo);
  CHECK(rows.size() == 4);
  const std::string csv = bench_csv(rows);
  CHECK(csv.rfind("batch,seq_len,samples_per_sec,peak_bytes\n", 0) == 0);
  for (const auto& r : rows) {
    CHECK(r.samples_per_sec > 0);
    CHECK(r.peak_bytes > 0);
  }
  bo.repeats = 3;
  CHECK_THROWS_AS(bench(m, bo), ConfigError);
}
