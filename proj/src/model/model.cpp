// SPDX-License-Identifier: Apache-2.0
#include "model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autodiff/ops.hpp"
#include "errors.hpp"
#include "traffic/repr.hpp"

namespace netmamba::model {

namespace {

template <typename T>
Var<T> normal_param(const ad::Shape& shape, double stddev, std::mt19937_64& rng, const std::string& name) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return Var<T>::parameter(std::move(t), name);
}

template <typename T>
Var<T> uniform_param(const ad::Shape& shape, double bound, std::mt19937_64& rng, const std::string& name) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return Var<T>::parameter(std::move(t), name);
}

template <typename T>
Var<T> const_param(const ad::Shape& shape, T value, const std::string& name) {
  Tensor<T> t(shape);
  std::fill(t.data.begin(), t.data.end(), value);
  return Var<T>::parameter(std::move(t), name);
}

const char* norm_name(ssm::NormKind k) { return k == ssm::NormKind::kLayer ? "layer" : "rms"; }

}  // namespace

std::size_t visible_len(std::size_t seq_len, double ratio) {
  const double v = std::ceil((1.0 - ratio) * double(seq_len) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(v, 1.0)), 1, seq_len);
}

std::size_t ModelConfig::visible_len() const { return model::visible_len(seq_len(), mask_ratio); }

ssm::SSMDims ModelConfig::encoder_dims() const {
  return ssm::SSMDims{d_enc, e_enc, d_state, dt_rank, conv_kernel, norm, ssm_skip};
}

ssm::SSMDims ModelConfig::decoder_dims() const {
  return ssm::SSMDims{d_dec, e_dec, d_state, dt_rank, conv_kernel, norm, ssm_skip};
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(stride_len >= 1, "stride_len must be at least 1");
  need(num_strides >= 1, "num_strides must be at least 1");
  need(d_enc >= 1 && e_enc >= 1 && d_dec >= 1 && e_dec >= 1, "model widths must be positive");
  need(depth_enc >= 1, "depth_enc must be at least 1");
  need(d_state >= 1, "d_state must be at least 1");
  need(dt_rank >= 1, "dt_rank must be at least 1");
  need(conv_kernel >= 1, "conv_kernel must be at least 1");
  need(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio must lie in (0, 1)");
  need(num_classes >= 2, "num_classes must be at least 2, got " + std::to_string(num_classes));
  if (patch_split) {
    const auto bytes = num_strides * stride_len;
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(bytes))));
    need(side * side == bytes, "patch_split needs a square flow array");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"stride_len", c.stride_len},   {"num_strides", c.num_strides},
          {"d_enc", c.d_enc},             {"e_enc", c.e_enc},
          {"depth_enc", c.depth_enc},     {"d_dec", c.d_dec},
          {"e_dec", c.e_dec},             {"depth_dec", c.depth_dec},
          {"d_state", c.d_state},         {"dt_rank", c.dt_rank},
          {"conv_kernel", c.conv_kernel}, {"mask_ratio", c.mask_ratio},
          {"num_classes", c.num_classes}, {"use_pos_embed", c.use_pos_embed},
          {"patch_split", c.patch_split}, {"ssm_skip", c.ssm_skip},
          {"norm", norm_name(c.norm)},
          {"recon_target", c.recon_target == ReconTarget::kEmbedded ? "embedded" : "raw"}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.stride_len = j.at("stride_len");
    c.num_strides = j.at("num_strides");
    c.d_enc = j.at("d_enc");
    c.e_enc = j.at("e_enc");
    c.depth_enc = j.at("depth_enc");
    c.d_dec = j.at("d_dec");
    c.e_dec = j.at("e_dec");
    c.depth_dec = j.at("depth_dec");
    c.d_state = j.at("d_state");
    c.dt_rank = j.at("dt_rank");
    c.conv_kernel = j.at("conv_kernel");
    c.mask_ratio = j.at("mask_ratio");
    c.num_classes = j.at("num_classes");
    c.use_pos_embed = j.at("use_pos_embed");
    c.patch_split = j.at("patch_split");
    c.ssm_skip = j.value("ssm_skip", false);
    c.norm = j.at("norm").get<std::string>() == "layer" ? ssm::NormKind::kLayer : ssm::NormKind::kRms;
    c.recon_target = j.at("recon_target").get<std::string>() == "embedded" ? ReconTarget::kEmbedded : ReconTarget::kRaw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

ParameterCounts count_parameters(const ModelConfig& c) {
  const std::size_t L = c.seq_len();
  const std::size_t norm_d = c.norm == ssm::NormKind::kLayer ? 2 : 1;
  std::size_t shared = c.stride_len * c.d_enc + c.d_enc;  // stride projection, class token
  if (c.use_pos_embed) shared += L * c.d_enc;
  shared += c.depth_enc * c.encoder_dims().parameter_count();
  shared += norm_d * c.d_enc;  // encoder final norm

  const std::size_t target = c.recon_target == ReconTarget::kEmbedded ? c.d_enc : c.stride_len;
  std::size_t decoder = c.d_enc * c.d_dec + c.d_dec + c.d_dec;  // enc2dec, mask token
  if (c.use_pos_embed) decoder += L * c.d_dec;
  decoder += c.depth_dec * c.decoder_dims().parameter_count();
  decoder += norm_d * c.d_dec;
  decoder += c.d_dec * target + target;

  const std::size_t head = c.d_enc * c.d_enc + c.d_enc + c.d_enc * c.num_classes + c.num_classes;
  return {shared + decoder, shared + head};
}

MaskPlan make_mask(std::size_t seq_len, double ratio, std::mt19937_64& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  if (seq_len < 2) throw ConfigError("sequence needs at least one stride and the class token");
  const std::size_t n = seq_len - 1;
  MaskPlan plan;
  plan.permutation.resize(n);
  std::iota(plan.permutation.begin(), plan.permutation.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(plan.permutation[i], plan.permutation[pick(rng)]);
  }
  const std::size_t keep = visible_len(seq_len, ratio) - 1;
  plan.visible.assign(plan.permutation.begin(), plan.permutation.begin() + static_cast<std::ptrdiff_t>(keep));
  plan.masked.assign(plan.permutation.begin() + static_cast<std::ptrdiff_t>(keep), plan.permutation.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

template <typename T>
Tensor<T> strides_tensor(const std::vector<const std::uint8_t*>& samples, const ModelConfig& cfg) {
  const std::size_t n = cfg.num_strides * cfg.stride_len;
  Tensor<T> out({samples.size(), cfg.num_strides, cfg.stride_len});
  for (std::size_t b = 0; b < samples.size(); ++b) {
    std::span<const std::uint8_t> src(samples[b], n);
    traffic::Bytes reordered;
    if (cfg.patch_split) {
      reordered = traffic::patch_reorder(src, cfg.stride_len);
      src = reordered;
    }
    T* dst = out.data.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(src[i]) / T(255);
  }
  return out;
}

template <typename T>
NetMamba<T>::NetMamba(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t L = cfg_.seq_len(), De = cfg_.d_enc, Dd = cfg_.d_dec;
  const std::size_t target = cfg_.recon_target == ReconTarget::kEmbedded ? De : cfg_.stride_len;
  const bool layer = cfg_.norm == ssm::NormKind::kLayer;

  embed_w_ = uniform_param<T>({cfg_.stride_len, De}, 1.0 / std::sqrt(double(cfg_.stride_len)), rng, "embed.w");
  cls_token_ = normal_param<T>({De}, 0.02, rng, "cls_token");
  if (cfg_.use_pos_embed) pos_enc_ = normal_param<T>({L, De}, 0.02, rng, "pos_enc");
  for (std::size_t i = 0; i < cfg_.depth_enc; ++i)
    enc_.push_back(ssm::MambaBlockParams<T>::init(cfg_.encoder_dims(), rng));
  enc_norm_g_ = const_param<T>({De}, T(1), "enc_norm.gain");
  if (layer) enc_norm_b_ = const_param<T>({De}, T(0), "enc_norm.bias");

  enc2dec_w_ = uniform_param<T>({De, Dd}, 1.0 / std::sqrt(double(De)), rng, "enc2dec.w");
  enc2dec_b_ = const_param<T>({Dd}, T(0), "enc2dec.b");
  mask_token_ = normal_param<T>({Dd}, 0.02, rng, "mask_token");
  if (cfg_.use_pos_embed) pos_dec_ = normal_param<T>({L, Dd}, 0.02, rng, "pos_dec");
  for (std::size_t i = 0; i < cfg_.depth_dec; ++i)
    dec_.push_back(ssm::MambaBlockParams<T>::init(cfg_.decoder_dims(), rng));
  dec_norm_g_ = const_param<T>({Dd}, T(1), "dec_norm.gain");
  if (layer) dec_norm_b_ = const_param<T>({Dd}, T(0), "dec_norm.bias");
  // Starts near the midpoint of the [0, 1] byte range for raw targets.
  recon_w_ = normal_param<T>({Dd, target}, 0.01, rng, "recon.w");
  recon_b_ = const_param<T>({target}, cfg_.recon_target == ReconTarget::kRaw ? T(0.5) : T(0), "recon.b");

  head_w1_ = uniform_param<T>({De, De}, 1.0 / std::sqrt(double(De)), rng, "head.w1");
  head_b1_ = const_param<T>({De}, T(0), "head.b1");
  head_w2_ = uniform_param<T>({De, cfg_.num_classes}, 1.0 / std::sqrt(double(De)), rng, "head.w2");
  head_b2_ = const_param<T>({cfg_.num_classes}, T(0), "head.b2");
}

template <typename T>
Var<T> NetMamba<T>::linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) const {
  return ad::add(ad::matmul(x, w), b);
}

template <typename T>
Var<T> NetMamba<T>::embed(const Var<T>& x) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.num_strides || x.dim(2) != cfg_.stride_len)
    ad::throw_shape_error("embed", x.shape(), {0, cfg_.num_strides, cfg_.stride_len});
  const std::size_t B = x.dim(0);
  Var<T> tokens = ad::concat<T>({ad::matmul(x, embed_w_), ad::expand(cls_token_, {B, 1})}, 1);
  if (cfg_.use_pos_embed) tokens = ad::add(tokens, pos_enc_);
  return tokens;
}

template <typename T>
Var<T> NetMamba<T>::encode(const Var<T>& tokens) const {
  Var<T> h = tokens;
  for (std::size_t i = 0; i < enc_.size(); ++i) h = ssm::block_forward(h, enc_[i], i);
  return ssm::apply_norm(h, enc_norm_g_, enc_norm_b_, cfg_.norm);
}

template <typename T>
PretrainOutput<T> NetMamba<T>::pretrain_forward(const Var<T>& x, const std::vector<MaskPlan>& plans) const {
  const std::size_t B = x.dim(0), Ns = cfg_.num_strides, L = cfg_.seq_len();
  if (plans.size() != B) throw ad::ContractError("pretrain_forward: one mask plan per sample required");
  const std::size_t V = plans.front().visible.size() + 1;
  const std::size_t M = plans.front().masked.size();
  for (const auto& p : plans)
    if (p.visible.size() + 1 != V || p.masked.size() != M || V + M != L)
      throw ad::ContractError("pretrain_forward: mask plans inconsistent with the sequence length");

  std::vector<std::size_t> vis_rows, unshuffle, masked_rows;
  vis_rows.reserve(B * V);
  unshuffle.resize(B * L);
  masked_rows.reserve(B * M);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& p = plans[b];
    for (std::size_t k = 0; k < p.visible.size(); ++k) {
      vis_rows.push_back(p.visible[k]);
      unshuffle[b * L + p.visible[k]] = k;
    }
    vis_rows.push_back(Ns);
    unshuffle[b * L + Ns] = V - 1;
    for (std::size_t k = 0; k < M; ++k) {
      unshuffle[b * L + p.masked[k]] = V + k;
      masked_rows.push_back(p.masked[k]);
    }
  }

  const Var<T> x0 = embed(x);
  const Var<T> latent = encode(ad::gather_rows(x0, vis_rows, V));
  Var<T> h = linear(latent, enc2dec_w_, enc2dec_b_);
  if (M > 0) h = ad::concat<T>({h, ad::expand(mask_token_, {B, M})}, 1);
  h = ad::gather_rows(h, unshuffle, L);
  if (cfg_.use_pos_embed) h = ad::add(h, pos_dec_);
  for (std::size_t i = 0; i < dec_.size(); ++i) h = ssm::block_forward(h, dec_[i], enc_.size() + i);
  h = ssm::apply_norm(h, dec_norm_g_, dec_norm_b_, cfg_.norm);

  PretrainOutput<T> out;
  if (M == 0) {
    out.pred = Var<T>::constant(Tensor<T>({B, 0, recon_w_.dim(1)}));
    out.loss = Var<T>::constant(Tensor<T>({}, std::vector<T>{T(0)}));
    return out;
  }
  out.pred = linear(ad::gather_rows(h, masked_rows, M), recon_w_, recon_b_);
  const Var<T> target = cfg_.recon_target == ReconTarget::kEmbedded
                            ? ad::gather_rows(ad::detach(x0), masked_rows, M)
                            : ad::gather_rows(ad::detach(x), masked_rows, M);
  out.loss = ad::mse(out.pred, target);
  if (!std::isfinite(static_cast<double>(out.loss.item()))) throw NumericFault("non-finite reconstruction loss");
  return out;
}

template <typename T>
Var<T> NetMamba<T>::finetune_forward(const Var<T>& x) const {
  if (cfg_.num_classes < 2) throw ConfigError("classification needs at least 2 classes");
  const std::size_t B = x.dim(0), L = cfg_.seq_len();
  const Var<T> h = encode(embed(x));
  const Var<T> cls = ad::reshape(ad::slice(h, 1, L - 1, 1), {B, cfg_.d_enc});
  const Var<T> logits = linear(ad::silu(linear(cls, head_w1_, head_b1_)), head_w2_, head_b2_);
  if (!ad::all_finite(logits.data())) throw NumericFault("non-finite logits");
  return logits;
}

template <typename T>
NamedParams<T> NetMamba<T>::encoder_parameters() const {
  NamedParams<T> list;
  auto put = [&](const char* n, const Var<T>& v) {
    if (v.defined()) list.emplace_back(n, v);
  };
  put("embed.w", embed_w_);
  put("cls_token", cls_token_);
  put("pos_enc", pos_enc_);
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    auto blk = enc_[i].named("enc." + std::to_string(i) + ".");
    list.insert(list.end(), blk.begin(), blk.end());
  }
  put("enc_norm.gain", enc_norm_g_);
  put("enc_norm.bias", enc_norm_b_);
  return list;
}

template <typename T>
NamedParams<T> NetMamba<T>::pretrain_parameters() const {
  NamedParams<T> list = encoder_parameters();
  auto put = [&](const char* n, const Var<T>& v) {
    if (v.defined()) list.emplace_back(n, v);
  };
  put("enc2dec.w", enc2dec_w_);
  put("enc2dec.b", enc2dec_b_);
  put("mask_token", mask_token_);
  put("pos_dec", pos_dec_);
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    auto blk = dec_[i].named("dec." + std::to_string(i) + ".");
    list.insert(list.end(), blk.begin(), blk.end());
  }
  put("dec_norm.gain", dec_norm_g_);
  put("dec_norm.bias", dec_norm_b_);
  put("recon.w", recon_w_);
  put("recon.b", recon_b_);
  return list;
}

template <typename T>
NamedParams<T> NetMamba<T>::finetune_parameters() const {
  NamedParams<T> list = encoder_parameters();
  list.emplace_back("head.w1", head_w1_);
  list.emplace_back("head.b1", head_b1_);
  list.emplace_back("head.w2", head_w2_);
  list.emplace_back("head.b2", head_b2_);
  return list;
}

template <typename T>
NamedParams<T> NetMamba<T>::parameters() const {
  NamedParams<T> list = pretrain_parameters();
  const NamedParams<T> ft = finetune_parameters();
  list.insert(list.end(), ft.end() - 4, ft.end());
  return list;
}

template <typename T>
void NetMamba<T>::load(const CheckpointFile& ckpt, const NamedParams<T>& which) {
  // Verify everything before touching any parameter.
  std::vector<const StoredTensor*> found;
  for (const auto& [name, var] : which) {
    const StoredTensor* t = ckpt.find(name);
    if (!t) throw CheckpointMismatch("checkpoint is missing tensor " + name, name);
    if (t->shape != var.shape())
      throw CheckpointMismatch("tensor " + name + " has shape " + ad::shape_str(t->shape) + " in the checkpoint but " +
                                   ad::shape_str(var.shape()) + " in the model",
                               name);
    found.push_back(t);
  }
  for (std::size_t i = 0; i < which.size(); ++i) {
    Var<T> v = which[i].second;
    auto& dst = v.mutable_value().data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(found[i]->data[j]);
  }
}

template <typename T>
void NetMamba<T>::store(CheckpointFile& ckpt) const {
  ckpt.meta["config"] = to_json(cfg_);
  for (const auto& [name, var] : parameters()) {
    StoredTensor t{name, var.shape(), {}};
    t.data.assign(var.data().begin(), var.data().end());
    ckpt.tensors.push_back(std::move(t));
  }
}

template <typename T>
Var<T> loss_cls(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

template class NetMamba<float>;
template class NetMamba<double>;
template Tensor<float> strides_tensor<float>(const std::vector<const std::uint8_t*>&, const ModelConfig&);
template Tensor<double> strides_tensor<double>(const std::vector<const std::uint8_t*>&, const ModelConfig&);
template Var<float> loss_cls(const Var<float>&, const std::vector<std::size_t>&);
template Var<double> loss_cls(const Var<double>&, const std::vector<std::size_t>&);

}  // namespace netmamba::model
