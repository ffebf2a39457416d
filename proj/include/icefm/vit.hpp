// SPDX-License-Identifier: Apache-2.0
//
// Toy vision-transformer segmenter: patch embedding, pre-norm encoder blocks,
// a linear per-token class head and nearest-neighbour upsampling to pixels.
// Optional prompt tokens and low-rank attention adapters are added by the
// fine-tuning strategies.
#pragma once

#include <array>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icefm/adapt_config.hpp"
#include "icefm/model.hpp"
#include "icefm/nn/ops.hpp"

namespace icefm {

template <typename S>
class VitModel final : public SegmentationModel<S> {
 public:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  /// Attention projections, in the order q, k, v, out.
  enum Proj { kQ = 0, kK = 1, kV = 2, kO = 3 };

  VitModel(const ModelSpec& spec, Rng& rng) : SegmentationModel<S>(spec) {
    spec.validate();
    const auto& v = spec.vit;
    const int d = v.embed_dim;
    const int patch_dim = spec.in_channels * v.patch_size * v.patch_size;
    auto& ps = this->params_;
    const auto zeros_row = [](int n) { return RowMatrix<S>::Zero(1, n); };

    patch_w_ = ps.add("encoder.patch_embed.weight", ParamRole::encoder_weight, nn::xavier_uniform<S>(d, patch_dim, rng));
    if (v.bias) patch_b_ = ps.add("encoder.patch_embed.bias", ParamRole::encoder_bias, zeros_row(d));
    pos_ = ps.add("encoder.pos_embed", ParamRole::encoder_weight, nn::normal_init<S>(tokens(), d, 0.02, rng));

    const std::array<ParamRole, 4> roles{ParamRole::attn_q, ParamRole::attn_k, ParamRole::attn_v, ParamRole::attn_out};
    const std::array<const char*, 4> names{"q", "k", "v", "out"};
    blocks_.resize(v.depth);
    for (int l = 0; l < v.depth; ++l) {
      auto& b = blocks_[l];
      const std::string pre = "encoder.block" + std::to_string(l) + ".";
      auto track = [&](std::size_t idx) {
        b.members.push_back(idx);
        return idx;
      };
      if (v.norm) {
        b.n1g = track(ps.add(pre + "norm1.weight", ParamRole::norm, RowMatrix<S>::Ones(1, d)));
        b.n1b = track(ps.add(pre + "norm1.bias", ParamRole::encoder_bias, zeros_row(d)));
      }
      for (int p = 0; p < 4; ++p) {
        b.w[p] = track(ps.add(pre + "attn." + names[p] + ".weight", roles[p], nn::xavier_uniform<S>(d, d, rng)));
        if (v.bias) b.b[p] = track(ps.add(pre + "attn." + names[p] + ".bias", ParamRole::encoder_bias, zeros_row(d)));
      }
      if (v.norm) {
        b.n2g = track(ps.add(pre + "norm2.weight", ParamRole::norm, RowMatrix<S>::Ones(1, d)));
        b.n2b = track(ps.add(pre + "norm2.bias", ParamRole::encoder_bias, zeros_row(d)));
      }
      const int hidden = d * v.mlp_ratio;
      b.fc1w = track(ps.add(pre + "mlp.fc1.weight", ParamRole::mlp, nn::xavier_uniform<S>(hidden, d, rng)));
      if (v.bias) b.fc1b = track(ps.add(pre + "mlp.fc1.bias", ParamRole::encoder_bias, zeros_row(hidden)));
      b.fc2w = track(ps.add(pre + "mlp.fc2.weight", ParamRole::mlp, nn::xavier_uniform<S>(d, hidden, rng)));
      if (v.bias) b.fc2b = track(ps.add(pre + "mlp.fc2.bias", ParamRole::encoder_bias, zeros_row(d)));
    }
    if (v.norm) {
      normf_g_ = ps.add("encoder.norm.weight", ParamRole::norm, RowMatrix<S>::Ones(1, d));
      normf_b_ = ps.add("encoder.norm.bias", ParamRole::encoder_bias, zeros_row(d));
    }
    head_w_ = ps.add("decoder.head.weight", ParamRole::decoder, nn::xavier_uniform<S>(spec.class_count, d, rng));
    head_b_ = ps.add("decoder.head.bias", ParamRole::decoder, zeros_row(spec.class_count));
  }

  [[nodiscard]] int tokens() const {
    const int side = this->spec_.vit.image_size / this->spec_.vit.patch_size;
    return side * side;
  }
  [[nodiscard]] int depth() const { return static_cast<int>(blocks_.size()); }
  [[nodiscard]] int embed_dim() const { return this->spec_.vit.embed_dim; }
  [[nodiscard]] int prompt_length() const { return prompt_length_; }
  [[nodiscard]] bool deep_prompts() const { return deep_prompts_; }
  [[nodiscard]] bool has_lora() const { return lora_.has_value(); }
  [[nodiscard]] const std::optional<LoraConfig>& lora() const { return lora_; }

  /// Adds learnable prompt tokens: one set per layer (deep) or one set at the
  /// encoder input (shallow). Returns the number of parameters added.
  std::int64_t add_prompts(const VptConfig& cfg, Rng& rng) {
    cfg.validate();
    if (vpt_applied_) throw ValidationError("model already carries prompt tokens");
    vpt_applied_ = true;
    prompt_length_ = cfg.prompt_length;
    deep_prompts_ = cfg.per_layer;
    if (prompt_length_ == 0) return 0;
    const int sets = deep_prompts_ ? depth() : 1;
    std::int64_t added = 0;
    for (int l = 0; l < sets; ++l) {
      auto init = nn::uniform_init<S>(prompt_length_, embed_dim(), -0.1, 0.1, rng);
      const auto idx = this->params_.add("encoder.prompt" + std::to_string(l), ParamRole::prompt, std::move(init));
      prompts_.push_back(idx);
      added += this->params_[idx].count();
    }
    return added;
  }

  /// Adds parallel low-rank paths (alpha/r)·B·A·dropout(x) to the targeted
  /// projections; A is Gaussian with std 1/sqrt(d_in) and B starts at zero.
  std::int64_t add_lora(const LoraConfig& cfg, Rng& rng) {
    cfg.validate();
    if (lora_) throw ValidationError("model already carries LoRA adapters");
    lora_ = cfg;
    const int d = embed_dim();
    std::int64_t added = 0;
    const std::array<const char*, 4> names{"q", "k", "v", "out"};
    for (int l = 0; l < depth(); ++l) {
      for (auto target : cfg.targets) {
        const int p = proj_of(target);
        const std::string pre = "encoder.block" + std::to_string(l) + ".attn." + names[p] + ".lora_";
        auto& b = blocks_[l];
        b.lora_a[p] = this->params_.add(pre + "A", ParamRole::lora, nn::normal_init<S>(cfg.rank, d, 1.0 / std::sqrt(double(d)), rng));
        b.lora_b[p] = this->params_.add(pre + "B", ParamRole::lora, RowMatrix<S>::Zero(d, cfg.rank));
        b.members.push_back(b.lora_a[p]);
        b.members.push_back(b.lora_b[p]);
        added += static_cast<std::int64_t>(cfg.rank) * (d + d);
      }
    }
    return added;
  }

  [[nodiscard]] S lora_scale() const { return lora_ ? static_cast<S>(lora_->scale()) : S(0); }

  Planes<S> forward(const Planes<S>& input, Mode mode, Rng* rng, std::unique_ptr<Tape>* tape_out) const override {
    check_input(input);
    const auto& ps = this->params_;
    std::unique_ptr<VitTape> tape;
    if (tape_out) tape = std::make_unique<VitTape>();
    const bool training = mode == Mode::train;

    RowMatrix<S> patches = patchify(input);
    RowMatrix<S> x = nn::linear<S>(patches, ps.value(patch_w_), bias(patch_b_));
    x += ps.value(pos_);
    if (!deep_prompts_ && prompt_length_ > 0) x = prepend(ps.value(prompts_[0]), x);
    if (tape) {
      tape->patches = std::move(patches);
      tape->blocks.resize(blocks_.size());
    }

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      BlockTape local;
      BlockTape& bt = tape ? tape->blocks[l] : local;
      RowMatrix<S> xin = (deep_prompts_ && prompt_length_ > 0) ? prepend(ps.value(prompts_[l]), x) : std::move(x);

      RowMatrix<S> h1 = b.n1g != kNone ? nn::layer_norm<S>(xin, ps.value(b.n1g), ps.value(b.n1b), &bt.ln1) : xin;
      std::array<RowMatrix<S>, 3> qkv;
      for (int p = 0; p < 3; ++p) {
        qkv[p] = nn::linear<S>(h1, ps.value(b.w[p]), bias(b.b[p]));
        if (b.lora_a[p] != kNone) qkv[p] += lora_forward(b, p, h1, training, rng, bt);
      }
      RowMatrix<S> attn = nn::attention<S>(qkv[0], qkv[1], qkv[2], this->spec_.vit.heads, tape ? &bt.attn : nullptr);
      RowMatrix<S> proj = nn::linear<S>(attn, ps.value(b.w[kO]), bias(b.b[kO]));
      if (b.lora_a[kO] != kNone) proj += lora_forward(b, kO, attn, training, rng, bt);
      RowMatrix<S> xmid = xin + proj;
      RowMatrix<S> h2 = b.n2g != kNone ? nn::layer_norm<S>(xmid, ps.value(b.n2g), ps.value(b.n2b), &bt.ln2) : xmid;
      RowMatrix<S> pre_act = nn::linear<S>(h2, ps.value(b.fc1w), bias(b.fc1b));
      RowMatrix<S> act = nn::gelu<S>(pre_act);
      RowMatrix<S> xout = xmid + nn::linear<S>(act, ps.value(b.fc2w), bias(b.fc2b));

      if (deep_prompts_ && prompt_length_ > 0)
        x = xout.bottomRows(xout.rows() - prompt_length_);
      else
        x = std::move(xout);
      if (tape) {
        bt.h1 = std::move(h1);
        bt.qkv = std::move(qkv);
        bt.attn_out = std::move(attn);
        bt.h2 = std::move(h2);
        bt.pre_act = std::move(pre_act);
        bt.act = std::move(act);
      }
    }
    if (!deep_prompts_ && prompt_length_ > 0) x = x.bottomRows(x.rows() - prompt_length_).eval();

    RowMatrix<S> hf = normf_g_ != kNone ? nn::layer_norm<S>(x, ps.value(normf_g_), ps.value(normf_b_), tape ? &tape->lnf : nullptr) : x;
    RowMatrix<S> token_logits = nn::linear<S>(hf, ps.value(head_w_), &ps.value(head_b_));
    Planes<S> out = unpatchify_logits(token_logits, input.height, input.width);
    if (tape) {
      tape->final_tokens = std::move(hf);
      *tape_out = std::move(tape);
    }
    return out;
  }

  void backward(const Tape& base_tape, const Planes<S>& dlogits, Gradients<S>& grads) const override {
    const auto& tape = dynamic_cast<const VitTape&>(base_tape);
    const auto& ps = this->params_;
    auto slot = [&](std::size_t idx) -> RowMatrix<S>* { return idx == kNone ? nullptr : &grads.slots[idx]; };

    // Decoder head: each token's logit gradient is the sum over its pixels.
    RowMatrix<S> dtok = pool_logit_grad(dlogits);
    const bool encoder_needed = needs_encoder_grad(grads);
    RowMatrix<S> dx = nn::linear_backward<S>(tape.final_tokens, ps.value(head_w_), dtok, slot(head_w_), slot(head_b_), encoder_needed);
    if (!encoder_needed) return;
    if (normf_g_ != kNone) dx = nn::layer_norm_backward<S>(tape.lnf, ps.value(normf_g_), dx, slot(normf_g_), slot(normf_b_));
    const int plen = prompt_length_;
    if (!deep_prompts_ && plen > 0) dx = prepend(RowMatrix<S>::Zero(plen, dx.cols()), dx);

    for (int l = depth() - 1; l >= 0; --l) {
      const auto& b = blocks_[l];
      const auto& bt = tape.blocks[l];
      RowMatrix<S> dxout = (deep_prompts_ && plen > 0) ? prepend(RowMatrix<S>::Zero(plen, dx.cols()), dx) : std::move(dx);

      // MLP branch.
      RowMatrix<S> dact = nn::linear_backward<S>(bt.act, ps.value(b.fc2w), dxout, slot(b.fc2w), slot(b.fc2b), true);
      RowMatrix<S> dpre = nn::gelu_backward<S>(bt.pre_act, dact);
      RowMatrix<S> dh2 = nn::linear_backward<S>(bt.h2, ps.value(b.fc1w), dpre, slot(b.fc1w), slot(b.fc1b), true);
      RowMatrix<S> dxmid = dxout;
      if (b.n2g != kNone)
        dxmid += nn::layer_norm_backward<S>(bt.ln2, ps.value(b.n2g), dh2, slot(b.n2g), slot(b.n2b));
      else
        dxmid += dh2;

      // Attention branch.
      RowMatrix<S> dattn = nn::linear_backward<S>(bt.attn_out, ps.value(b.w[kO]), dxmid, slot(b.w[kO]), slot(b.b[kO]), true);
      if (b.lora_a[kO] != kNone) dattn += lora_backward(b, kO, bt, dxmid, grads);
      std::array<RowMatrix<S>, 3> dqkv;
      nn::attention_backward<S>(bt.attn, bt.qkv[0], bt.qkv[1], bt.qkv[2], dattn, this->spec_.vit.heads, dqkv[0], dqkv[1], dqkv[2]);
      RowMatrix<S> dh1 = RowMatrix<S>::Zero(bt.h1.rows(), bt.h1.cols());
      for (int p = 0; p < 3; ++p) {
        dh1 += nn::linear_backward<S>(bt.h1, ps.value(b.w[p]), dqkv[p], slot(b.w[p]), slot(b.b[p]), true);
        if (b.lora_a[p] != kNone) dh1 += lora_backward(b, p, bt, dqkv[p], grads);
      }
      RowMatrix<S> dxin = dxmid;
      if (b.n1g != kNone)
        dxin += nn::layer_norm_backward<S>(bt.ln1, ps.value(b.n1g), dh1, slot(b.n1g), slot(b.n1b));
      else
        dxin += dh1;

      if (deep_prompts_ && plen > 0) {
        if (grads.wants(prompts_[l])) grads.slots[prompts_[l]] += dxin.topRows(plen);
        dx = dxin.bottomRows(dxin.rows() - plen);
      } else {
        dx = std::move(dxin);
      }
      if (!needs_grad_below(l, grads)) return;
    }

    if (!deep_prompts_ && plen > 0) {
      if (grads.wants(prompts_[0])) grads.slots[prompts_[0]] += dx.topRows(plen);
      dx = dx.bottomRows(dx.rows() - plen).eval();
    }
    if (grads.wants(pos_)) grads.slots[pos_] += dx;
    nn::linear_backward<S>(tape.patches, ps.value(patch_w_), dx, slot(patch_w_), slot(patch_b_), false);
  }

  std::unique_ptr<SegmentationModel<S>> clone() const override { return std::make_unique<VitModel>(*this); }

  nlohmann::json structure() const override {
    nlohmann::json j = nlohmann::json::object();
    if (vpt_applied_)
      j["vpt"] = {{"prompt_length", prompt_length_}, {"per_layer", deep_prompts_}};
    if (lora_) {
      std::vector<std::string> targets;
      for (auto t : lora_->targets) targets.emplace_back(to_string(t));
      j["lora"] = {{"rank", lora_->rank}, {"alpha", lora_->alpha}, {"dropout", lora_->dropout}, {"targets", targets}};
    }
    return j;
  }

  template <typename T>
  friend class VitModel;

  /// Copies structure and values from a model of another scalar type.
  template <typename T>
  explicit VitModel(const VitModel<T>& other) : SegmentationModel<S>(other.spec()) {
    this->params_ = other.params().template cast<S>();
    patch_w_ = other.patch_w_;
    patch_b_ = other.patch_b_;
    pos_ = other.pos_;
    normf_g_ = other.normf_g_;
    normf_b_ = other.normf_b_;
    head_w_ = other.head_w_;
    head_b_ = other.head_b_;
    prompts_ = other.prompts_;
    prompt_length_ = other.prompt_length_;
    deep_prompts_ = other.deep_prompts_;
    vpt_applied_ = other.vpt_applied_;
    lora_ = other.lora_;
    blocks_.resize(other.blocks_.size());
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& o = other.blocks_[l];
      auto& b = blocks_[l];
      b.n1g = o.n1g, b.n1b = o.n1b, b.n2g = o.n2g, b.n2b = o.n2b;
      b.w = o.w, b.b = o.b, b.lora_a = o.lora_a, b.lora_b = o.lora_b;
      b.fc1w = o.fc1w, b.fc1b = o.fc1b, b.fc2w = o.fc2w, b.fc2b = o.fc2b;
      b.members = o.members;
    }
  }

 private:
  struct Block {
    std::size_t n1g = kNone, n1b = kNone, n2g = kNone, n2b = kNone;
    std::array<std::size_t, 4> w{kNone, kNone, kNone, kNone};
    std::array<std::size_t, 4> b{kNone, kNone, kNone, kNone};
    std::array<std::size_t, 4> lora_a{kNone, kNone, kNone, kNone};
    std::array<std::size_t, 4> lora_b{kNone, kNone, kNone, kNone};
    std::size_t fc1w = kNone, fc1b = kNone, fc2w = kNone, fc2b = kNone;
    std::vector<std::size_t> members;
  };

  struct LoraTape {
    RowMatrix<S> dropped;  // adapter input after dropout
    RowMatrix<S> mask;     // inverted-dropout multipliers; empty when inactive
    RowMatrix<S> low;      // dropped · Aᵀ
  };

  struct BlockTape {
    nn::NormCache<S> ln1, ln2;
    nn::AttentionCache<S> attn;
    RowMatrix<S> h1, attn_out, h2, pre_act, act;
    std::array<RowMatrix<S>, 3> qkv;
    std::array<LoraTape, 4> lora;
  };

  struct VitTape final : Tape {
    RowMatrix<S> patches;
    std::vector<BlockTape> blocks;
    nn::NormCache<S> lnf;
    RowMatrix<S> final_tokens;
  };

  static int proj_of(ParamRole r) {
    switch (r) {
      case ParamRole::attn_q: return kQ;
      case ParamRole::attn_k: return kK;
      case ParamRole::attn_v: return kV;
      case ParamRole::attn_out: return kO;
      default: throw ValidationError("not an attention projection role");
    }
  }

  const RowMatrix<S>* bias(std::size_t idx) const { return idx == kNone ? nullptr : &this->params_.value(idx); }

  static RowMatrix<S> prepend(const RowMatrix<S>& top, const RowMatrix<S>& rest) {
    RowMatrix<S> out(top.rows() + rest.rows(), rest.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(rest.rows()) = rest;
    return out;
  }

  void check_input(const Planes<S>& in) const {
    const auto& s = this->spec_;
    if (in.channels != s.in_channels) throw ValidationError("vit: input has " + std::to_string(in.channels) + " channels, expected " + std::to_string(s.in_channels));
    if (in.height != s.vit.image_size || in.width != s.vit.image_size)
      throw ValidationError("vit: input must be " + std::to_string(s.vit.image_size) + "x" + std::to_string(s.vit.image_size));
  }

  RowMatrix<S> patchify(const Planes<S>& in) const {
    const int p = this->spec_.vit.patch_size;
    const int side = in.width / p;
    RowMatrix<S> out(tokens(), in.channels * p * p);
    for (int ty = 0; ty < side; ++ty)
      for (int tx = 0; tx < side; ++tx) {
        const int t = ty * side + tx;
        for (int c = 0; c < in.channels; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) out(t, (c * p + dy) * p + dx) = in.at(c, ty * p + dy, tx * p + dx);
      }
    return out;
  }

  Planes<S> unpatchify_logits(const RowMatrix<S>& token_logits, int h, int w) const {
    const int p = this->spec_.vit.patch_size;
    const int side = w / p;
    Planes<S> out(static_cast<int>(token_logits.cols()), h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.data.col(static_cast<Eigen::Index>(y) * w + x) = token_logits.row((y / p) * side + x / p).transpose();
    return out;
  }

  RowMatrix<S> pool_logit_grad(const Planes<S>& dlogits) const {
    const int p = this->spec_.vit.patch_size;
    const int side = dlogits.width / p;
    RowMatrix<S> dtok = RowMatrix<S>::Zero(tokens(), dlogits.channels);
    for (int y = 0; y < dlogits.height; ++y)
      for (int x = 0; x < dlogits.width; ++x)
        dtok.row((y / p) * side + x / p) += dlogits.data.col(static_cast<Eigen::Index>(y) * dlogits.width + x).transpose();
    return dtok;
  }

  RowMatrix<S> lora_forward(const Block& b, int p, const RowMatrix<S>& x, bool training, Rng* rng, BlockTape& bt) const {
    const auto& ps = this->params_;
    LoraTape& lt = bt.lora[p];
    const double rate = lora_->dropout;
    if (training && rate > 0.0) {
      if (!rng) throw ValidationError("vit: training-mode forward with LoRA dropout needs an rng");
      std::bernoulli_distribution keep(1.0 - rate);
      const S inv = S(1.0 / (1.0 - rate));
      lt.mask.resize(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < lt.mask.size(); ++i) lt.mask.data()[i] = keep(*rng) ? inv : S(0);
      lt.dropped = x.cwiseProduct(lt.mask);
    } else {
      lt.mask.resize(0, 0);
      lt.dropped = x;
    }
    lt.low = lt.dropped * ps.value(b.lora_a[p]).transpose();
    return (lt.low * ps.value(b.lora_b[p]).transpose()) * lora_scale();
  }

  RowMatrix<S> lora_backward(const Block& b, int p, const BlockTape& bt, const RowMatrix<S>& dy, Gradients<S>& grads) const {
    const auto& ps = this->params_;
    const LoraTape& lt = bt.lora[p];
    const S scale = lora_scale();
    RowMatrix<S> dy_scaled = dy * scale;
    if (grads.wants(b.lora_b[p])) grads.slots[b.lora_b[p]].noalias() += dy_scaled.transpose() * lt.low;
    RowMatrix<S> dlow = dy_scaled * ps.value(b.lora_b[p]);
    if (grads.wants(b.lora_a[p])) grads.slots[b.lora_a[p]].noalias() += dlow.transpose() * lt.dropped;
    RowMatrix<S> dx = dlow * ps.value(b.lora_a[p]);
    if (lt.mask.size()) dx = dx.cwiseProduct(lt.mask);
    return dx;
  }

  bool needs_encoder_grad(const Gradients<S>& grads) const {
    for (std::size_t i = 0; i < this->params_.size(); ++i)
      if (grads.wants(i) && this->params_[i].role != ParamRole::decoder) return true;
    return false;
  }

  /// Whether any parameter feeding block l's input wants a gradient.
  bool needs_grad_below(int l, const Gradients<S>& grads) const {
    for (int j = 0; j < l; ++j)
      for (auto idx : blocks_[j].members)
        if (grads.wants(idx)) return true;
    if (deep_prompts_)
      for (int j = 0; j < l && j < static_cast<int>(prompts_.size()); ++j)
        if (grads.wants(prompts_[j])) return true;
    if (!deep_prompts_ && !prompts_.empty() && grads.wants(prompts_[0])) return true;
    return grads.wants(patch_w_) || (patch_b_ != kNone && grads.wants(patch_b_)) || grads.wants(pos_);
  }

  std::size_t patch_w_ = kNone, patch_b_ = kNone, pos_ = kNone;
  std::size_t normf_g_ = kNone, normf_b_ = kNone, head_w_ = kNone, head_b_ = kNone;
  std::vector<Block> blocks_;
  std::vector<std::size_t> prompts_;
  int prompt_length_ = 0;
  bool deep_prompts_ = true;
  bool vpt_applied_ = false;
  std::optional<LoraConfig> lora_;
};

}  // namespace icefm
