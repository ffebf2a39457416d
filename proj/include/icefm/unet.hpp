// SPDX-License-Identifier: Apache-2.0
//
// U-Net baseline: per stage two 3×3 conv+ReLU layers with 2×2 max pooling
// between stages; the decoder upsamples (nearest), concatenates the skip
// connection and applies two 3×3 conv+ReLU layers; a 1×1 conv gives logits.
#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "icefm/model.hpp"
#include "icefm/nn/ops.hpp"

namespace icefm {

namespace detail {
struct UnetConv {
  int c_in = 0;
  std::size_t w = 0, b = 0;
};
struct UnetStage {
  UnetConv a, b;
};
}  // namespace detail

template <typename S>
class UnetModel final : public SegmentationModel<S> {
 public:
  UnetModel(const ModelSpec& spec, Rng& rng) : SegmentationModel<S>(spec) {
    spec.validate();
    const auto& ch = spec.unet.stage_channels;
    const int stages = static_cast<int>(ch.size());
    auto& ps = this->params_;
    auto conv = [&](const std::string& name, int c_in, int c_out, ParamRole wrole, ParamRole brole) {
      Conv c;
      c.c_in = c_in;
      c.w = ps.add(name + ".weight", wrole, nn::normal_init<S>(c_out, c_in * 9, std::sqrt(2.0 / (c_in * 9.0)), rng));
      c.b = ps.add(name + ".bias", brole, RowMatrix<S>::Zero(c_out, 1));
      return c;
    };
    int c_prev = spec.in_channels;
    for (int i = 0; i < stages; ++i) {
      const std::string pre = "encoder.stage" + std::to_string(i);
      enc_.push_back({conv(pre + ".conv1", c_prev, ch[i], ParamRole::encoder_weight, ParamRole::encoder_bias),
                      conv(pre + ".conv2", ch[i], ch[i], ParamRole::encoder_weight, ParamRole::encoder_bias)});
      c_prev = ch[i];
    }
    for (int i = stages - 2; i >= 0; --i) {
      const std::string pre = "decoder.up" + std::to_string(i);
      dec_.push_back({conv(pre + ".conv1", ch[i + 1] + ch[i], ch[i], ParamRole::decoder, ParamRole::decoder),
                      conv(pre + ".conv2", ch[i], ch[i], ParamRole::decoder, ParamRole::decoder)});
    }
    head_w_ = ps.add("decoder.head.weight", ParamRole::decoder, nn::xavier_uniform<S>(spec.class_count, ch[0], rng));
    head_b_ = ps.add("decoder.head.bias", ParamRole::decoder, RowMatrix<S>::Zero(spec.class_count, 1));
  }

  template <typename T>
  friend class UnetModel;

  template <typename T>
  explicit UnetModel(const UnetModel<T>& other) : SegmentationModel<S>(other.spec()) {
    this->params_ = other.params().template cast<S>();
    enc_ = other.enc_;
    dec_ = other.dec_;
    head_w_ = other.head_w_;
    head_b_ = other.head_b_;
  }

  Planes<S> forward(const Planes<S>& input, Mode, Rng*, std::unique_ptr<Tape>* tape_out) const override {
    check_input(input);
    const auto& ps = this->params_;
    std::unique_ptr<UnetTape> tape;
    if (tape_out) {
      tape = std::make_unique<UnetTape>();
      tape->enc.resize(enc_.size());
      tape->dec.resize(dec_.size());
    }
    const int stages = static_cast<int>(enc_.size());
    int h = input.height, w = input.width;
    RowMatrix<S> x = input.data;
    std::vector<RowMatrix<S>> skips(stages);
    std::vector<std::pair<int, int>> dims(stages);
    for (int i = 0; i < stages; ++i) {
      StageTape* st = tape ? &tape->enc[i] : nullptr;
      if (i > 0) {
        x = nn::max_pool2<S>(x, h, w, st ? &st->argmax : nullptr);
        h /= 2;
        w /= 2;
      }
      dims[i] = {h, w};
      x = run_stage(enc_[i], x, h, w, st);
      skips[i] = x;
    }
    for (int j = 0; j < static_cast<int>(dec_.size()); ++j) {
      const int level = stages - 2 - j;
      StageTape* st = tape ? &tape->dec[j] : nullptr;
      RowMatrix<S> up = nn::upsample2<S>(x, h, w);
      h *= 2;
      w *= 2;
      RowMatrix<S> cat(up.rows() + skips[level].rows(), up.cols());
      cat.topRows(up.rows()) = up;
      cat.bottomRows(skips[level].rows()) = skips[level];
      x = run_stage(dec_[j], cat, h, w, st);
    }
    Planes<S> out(this->spec_.class_count, h, w);
    out.data = ps.value(head_w_) * x;
    out.data.colwise() += ps.value(head_b_).col(0);
    if (tape) {
      tape->head_in = std::move(x);
      tape->dims = std::move(dims);
      *tape_out = std::move(tape);
    }
    return out;
  }

  void backward(const Tape& base_tape, const Planes<S>& dlogits, Gradients<S>& grads) const override {
    const auto& tape = dynamic_cast<const UnetTape&>(base_tape);
    const auto& ps = this->params_;
    const int stages = static_cast<int>(enc_.size());
    if (grads.wants(head_w_)) grads.slots[head_w_].noalias() += dlogits.data * tape.head_in.transpose();
    if (grads.wants(head_b_)) grads.slots[head_b_] += dlogits.data.rowwise().sum();
    const bool encoder_needed = wants_encoder(grads);
    if (!encoder_needed && !wants_decoder_body(grads)) return;
    RowMatrix<S> dx = ps.value(head_w_).transpose() * dlogits.data;

    std::vector<RowMatrix<S>> dskips(stages);
    for (int index = static_cast<int>(dec_.size()) - 1; index >= 0; --index) {
      const int skip_level = stages - 2 - index;
      const auto [h, w] = tape.dims[skip_level];
      const bool need_input = encoder_needed || wants_decoder_before(index, grads);
      RowMatrix<S> dcat = stage_backward(dec_[index], tape.dec[index], dx, h, w, grads, need_input);
      if (!need_input) return;
      const Eigen::Index up_rows = dcat.rows() - tape.enc[skip_level].out.rows();
      dskips[skip_level] = dcat.bottomRows(dcat.rows() - up_rows);
      dx = nn::upsample2_backward<S>(RowMatrix<S>(dcat.topRows(up_rows)), h / 2, w / 2);
    }
    if (!encoder_needed) return;
    // dx now holds the gradient w.r.t. the bottleneck output.
    for (int i = stages - 1; i >= 0; --i) {
      if (i < stages - 1) dx += dskips[i];
      const auto [h, w] = tape.dims[i];
      const bool need_input = i > 0 && wants_encoder_before(i, grads);
      RowMatrix<S> din = stage_backward(enc_[i], tape.enc[i], dx, h, w, grads, need_input);
      if (!need_input) return;
      dx = nn::max_pool2_backward<S>(din, tape.enc[i].argmax, h * 2, w * 2);
    }
  }

  std::unique_ptr<SegmentationModel<S>> clone() const override { return std::make_unique<UnetModel>(*this); }

 private:
  using Conv = detail::UnetConv;
  using Stage = detail::UnetStage;
  struct StageTape {
    std::vector<std::int32_t> argmax;  // pooling into this stage
    RowMatrix<S> col_a, col_b, act_a, out;
  };
  struct UnetTape final : Tape {
    std::vector<StageTape> enc, dec;
    std::vector<std::pair<int, int>> dims;
    RowMatrix<S> head_in;
  };

  void check_input(const Planes<S>& in) const {
    const auto& s = this->spec_;
    if (in.channels != s.in_channels) throw ValidationError("unet: input has " + std::to_string(in.channels) + " channels, expected " + std::to_string(s.in_channels));
    const int m = s.size_multiple();
    if (in.height % m != 0 || in.width % m != 0 || in.height == 0 || in.width == 0)
      throw ValidationError("unet: input sides must be positive multiples of " + std::to_string(m));
  }

  RowMatrix<S> run_stage(const Stage& st, const RowMatrix<S>& x, int h, int w, StageTape* tape) const {
    const auto& ps = this->params_;
    RowMatrix<S> a = nn::relu<S>(nn::conv3<S>(x, h, w, ps.value(st.a.w), ps.value(st.a.b), tape ? &tape->col_a : nullptr));
    RowMatrix<S> y = nn::relu<S>(nn::conv3<S>(a, h, w, ps.value(st.b.w), ps.value(st.b.b), tape ? &tape->col_b : nullptr));
    if (tape) {
      tape->act_a = std::move(a);
      tape->out = y;
    }
    return y;
  }

  RowMatrix<S> stage_backward(const Stage& st, const StageTape& tape, const RowMatrix<S>& dy, int h, int w, Gradients<S>& grads,
                              bool need_input) const {
    const auto& ps = this->params_;
    RowMatrix<S> d2 = nn::relu_backward<S>(tape.out, dy);
    RowMatrix<S> da = nn::conv3_backward<S>(tape.col_b, st.b.c_in, h, w, ps.value(st.b.w), d2, &grads.slots[st.b.w], &grads.slots[st.b.b], true);
    RowMatrix<S> d1 = nn::relu_backward<S>(tape.act_a, da);
    return nn::conv3_backward<S>(tape.col_a, st.a.c_in, h, w, ps.value(st.a.w), d1, &grads.slots[st.a.w], &grads.slots[st.a.b], need_input);
  }

  bool wants_encoder(const Gradients<S>& g) const {
    for (const auto& s : enc_)
      if (g.wants(s.a.w) || g.wants(s.a.b) || g.wants(s.b.w) || g.wants(s.b.b)) return true;
    return false;
  }
  bool wants_encoder_before(int stage, const Gradients<S>& g) const {
    for (int i = 0; i < stage; ++i) {
      const auto& s = enc_[i];
      if (g.wants(s.a.w) || g.wants(s.a.b) || g.wants(s.b.w) || g.wants(s.b.b)) return true;
    }
    return false;
  }
  bool wants_decoder_body(const Gradients<S>& g) const { return wants_decoder_before(static_cast<int>(dec_.size()), g); }
  /// dec_ is stored deepest-first; "before" means closer to the bottleneck.
  bool wants_decoder_before(int index, const Gradients<S>& g) const {
    for (int i = 0; i < index; ++i) {
      const auto& s = dec_[i];
      if (g.wants(s.a.w) || g.wants(s.a.b) || g.wants(s.b.w) || g.wants(s.b.b)) return true;
    }
    return false;
  }

  std::vector<Stage> enc_;
  std::vector<Stage> dec_;  // deepest first
  std::size_t head_w_ = 0, head_b_ = 0;
};

}  // namespace icefm
