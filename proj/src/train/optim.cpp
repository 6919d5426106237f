// SPDX-License-Identifier: Apache-2.0
#include "train/optim.hpp"

#include <cmath>
#include <numbers>

#include "autodiff/ops.hpp"
#include "errors.hpp"

namespace netmamba::train {

bool decays(const std::string& name, std::size_t rank) {
  if (rank < 2) return false;
  const std::string tail = "a_log";
  return !(name.size() >= tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0);
}

AdamW::AdamW(NamedParams<float> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, v] : params_) {
    m_.emplace_back(v.size(), 0.0f);
    v_.emplace_back(v.size(), 0.0f);
    decay_.push_back(decays(name, v.rank()));
  }
}

void AdamW::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

void AdamW::step(double lr) {
  for (const auto& [name, v] : params_)
    if (v.has_grad() && !ad::all_finite(v.grad())) throw NumericFault("non-finite gradient in parameter " + name);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].second;
    if (!var.has_grad()) continue;
    const auto g = var.grad();
    auto& w = var.mutable_value().data;
    auto& m = m_[i];
    auto& v = v_[i];
    const float wd = decay_[i] ? static_cast<float>(cfg_.weight_decay) : 0.0f;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const double mh = m[j] / bc1, vh = v[j] / bc2;
      w[j] -= static_cast<float>(lr * (mh / (std::sqrt(vh) + cfg_.eps) + wd * w[j]));
    }
  }
}

void AdamW::store(model::CheckpointFile& ckpt) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, var] = params_[i];
    ckpt.tensors.push_back({"opt.m." + name, var.shape(), m_[i]});
    ckpt.tensors.push_back({"opt.v." + name, var.shape(), v_[i]});
  }
  ckpt.meta["optimizer"] = {{"step", t_},
                            {"beta1", cfg_.beta1},
                            {"beta2", cfg_.beta2},
                            {"eps", cfg_.eps},
                            {"weight_decay", cfg_.weight_decay}};
}

void AdamW::load(const model::CheckpointFile& ckpt) {
  if (!ckpt.meta.contains("optimizer")) throw CheckpointMismatch("checkpoint has no optimizer state", "optimizer");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, var] = params_[i];
    for (const char* kind : {"opt.m.", "opt.v."}) {
      const std::string key = kind + name;
      const auto* t = ckpt.find(key);
      if (!t) throw CheckpointMismatch("checkpoint is missing optimizer tensor " + key, key);
      if (t->shape != var.shape()) throw CheckpointMismatch("optimizer tensor " + key + " has the wrong shape", key);
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = ckpt.find("opt.m." + params_[i].first)->data;
    v_[i] = ckpt.find("opt.v." + params_[i].first)->data;
  }
  t_ = ckpt.meta["optimizer"].at("step").get<std::uint64_t>();
}

double clip_grad_norm(const NamedParams<float>& params, double max_norm) {
  double sq = 0;
  for (const auto& [name, v] : params)
    for (float g : v.grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto [name, v] : params)
      if (v.has_grad())
        for (float& g : v.mutable_grad()) g *= s;
  }
  return norm;
}

std::size_t Schedule::warmup_steps() const {
  if (constant) return 0;
  return static_cast<std::size_t>(std::ceil(warmup_frac * double(total_steps)));
}

double Schedule::lr(std::size_t step) const {
  if (constant) return base_lr;
  const std::size_t w = warmup_steps();
  if (step < w) return base_lr * double(step + 1) / double(w);
  if (total_steps <= w) return base_lr;
  const double progress = std::min(1.0, double(step - w) / double(total_steps - w));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace netmamba::train
