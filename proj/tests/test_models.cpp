// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "icefm/unet.hpp"
#include "icefm/vit.hpp"
#include "support.hpp"

namespace icefm {
namespace {

using testing::random_planes;
using testing::rel_error;

/// Finite-difference check of every parameter's gradient for L = Σ w ⊙ logits.
void check_param_gradients(SegmentationModel<double>& model, const Planes<double>& x, Mode mode, int probes_per_tensor = 4) {
  Rng wrng(11);
  const Planes<double> w = random_planes<double>(model.spec().class_count, x.height, x.width, wrng);
  const auto loss = [&] {
    Rng r(5);
    return model.forward(x, mode, &r).data.cwiseProduct(w.data).sum();
  };
  Rng r(5);
  std::unique_ptr<Tape> tape;
  model.forward(x, mode, &r, &tape);
  auto grads = Gradients<double>::for_trainable(model.params());
  model.backward(*tape, w, grads);

  Rng pick(3);
  const double h = 1e-6;
  int probes = 0, nonzero = 0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    if (!p.trainable) continue;
    for (int k = 0; k < probes_per_tensor; ++k) {
      const auto idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint64_t>(p.value.size()));
      double& v = p.value.data()[idx];
      const double saved = v;
      v = saved + h;
      const double up = loss();
      v = saved - h;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.slots[i].data()[idx];
      ++probes;
      nonzero += std::abs(numeric) > 1e-9;
      EXPECT_LT(rel_error(analytic, numeric, 1e-4), 1e-4) << p.path << "[" << idx << "] analytic " << analytic << " numeric " << numeric;
    }
  }
  EXPECT_GT(probes, 0);
  EXPECT_GT(nonzero * 4, probes * 3) << "most probed gradients should be non-zero";
}

TEST(VitModel, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  auto model = build_model<double>(testing::small_vit_spec(), rng);
  const auto x = random_planes<double>(2, 8, 8, rng);
  check_param_gradients(*model, x, Mode::eval);
}

TEST(VitModel, GradientsWithPromptsAndAdapters) {
  Rng rng(2);
  auto model = build_model<double>(testing::small_vit_spec(), rng);
  auto& vit = dynamic_cast<VitModel<double>&>(*model);
  vit.add_prompts(VptConfig{3, true}, rng);
  LoraConfig lc;
  lc.rank = 2;
  lc.targets = {ParamRole::attn_q, ParamRole::attn_v, ParamRole::attn_out};
  vit.add_lora(lc, rng);
  for (auto& p : vit.params())
    if (p.role == ParamRole::lora) p.value = random_planes<double>(1, 1, static_cast<int>(p.value.size()), rng).data.reshaped<Eigen::RowMajor>(p.value.rows(), p.value.cols());
  const auto x = random_planes<double>(2, 8, 8, rng);
  check_param_gradients(*model, x, Mode::train);
}

TEST(VitModel, ShallowPromptsGradient) {
  Rng rng(4);
  auto model = build_model<double>(testing::small_vit_spec(), rng);
  dynamic_cast<VitModel<double>&>(*model).add_prompts(VptConfig{2, false}, rng);
  check_param_gradients(*model, random_planes<double>(2, 8, 8, rng), Mode::eval);
}

TEST(VitModel, NormFreeVariantGradient) {
  Rng rng(6);
  auto spec = testing::small_vit_spec(3, 4);
  spec.vit.bias = false;
  spec.vit.norm = false;
  auto model = build_model<double>(spec, rng);
  for (const auto& p : model->params()) EXPECT_NE(p.role, ParamRole::encoder_bias) << p.path;
  check_param_gradients(*model, random_planes<double>(3, 8, 8, rng), Mode::eval);
}

TEST(VitModel, FrozenEncoderBackwardOnlyFillsDecoder) {
  Rng rng(7);
  auto model = build_model<double>(testing::small_vit_spec(), rng);
  for (auto& p : model->params()) p.trainable = p.role == ParamRole::decoder;
  check_param_gradients(*model, random_planes<double>(2, 8, 8, rng), Mode::eval);
}

TEST(VitModel, TokenCountAndShapes) {
  ModelSpec spec;  // defaults: patch 8, image 64
  Rng rng(1);
  auto model = build_model<float>(spec, rng);
  const auto& vit = dynamic_cast<const VitModel<float>&>(*model);
  EXPECT_EQ(vit.tokens(), 64);
  const auto out = model->forward(random_planes<float>(2, 64, 64, rng));
  EXPECT_EQ(out.channels, 6);
  EXPECT_EQ(out.height, 64);
  EXPECT_EQ(out.width, 64);
  EXPECT_TRUE(out.data.allFinite());
}

TEST(VitModel, ExposesAttentionProjectionPaths) {
  Rng rng(1);
  auto model = build_model<float>(ModelSpec{}, rng);
  for (int l = 0; l < 4; ++l)
    for (const char* p : {"q", "k", "v", "out"}) {
      const auto idx = model->params().find("encoder.block" + std::to_string(l) + ".attn." + p + ".weight");
      ASSERT_TRUE(idx.has_value()) << l << p;
    }
  EXPECT_EQ(model->params()[*model->params().find("encoder.block3.attn.q.weight")].role, ParamRole::attn_q);
}

TEST(VitModel, RejectsWrongInput) {
  Rng rng(1);
  auto model = build_model<float>(ModelSpec{}, rng);
  EXPECT_THROW(model->forward(random_planes<float>(3, 64, 64, rng)), ValidationError);
  EXPECT_THROW(model->forward(random_planes<float>(2, 60, 64, rng)), ValidationError);
}

TEST(UnetModel, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  auto model = build_model<double>(testing::small_unet_spec(), rng);
  check_param_gradients(*model, random_planes<double>(2, 8, 8, rng), Mode::eval, 6);
}

TEST(UnetModel, DecoderOnlyAndPartialGradients) {
  Rng rng(9);
  auto model = build_model<double>(testing::small_unet_spec(), rng);
  for (auto& p : model->params()) p.trainable = p.role == ParamRole::decoder;
  check_param_gradients(*model, random_planes<double>(2, 8, 8, rng), Mode::eval);
  for (auto& p : model->params()) p.trainable = p.role == ParamRole::encoder_bias;
  check_param_gradients(*model, random_planes<double>(2, 8, 8, rng), Mode::eval);
}

TEST(UnetModel, OutputResolutionMatchesInput) {
  Rng rng(1);
  ModelSpec spec;
  spec.kind = ArchKind::unet;
  auto model = build_model<float>(spec, rng);
  EXPECT_EQ(spec.size_multiple(), 8);
  for (int side : {8, 16, 24}) {
    const auto out = model->forward(random_planes<float>(2, side, side, rng));
    EXPECT_EQ(out.channels, 6);
    EXPECT_EQ(out.height, side);
    EXPECT_EQ(out.width, side);
    EXPECT_TRUE(out.data.allFinite());
  }
  EXPECT_THROW(model->forward(random_planes<float>(2, 12, 16, rng)), ValidationError);
}

TEST(Models, SameSeedGivesIdenticalParameters) {
  for (auto kind : {ArchKind::vit_tiny, ArchKind::unet}) {
    ModelSpec spec;
    spec.kind = kind;
    auto a = build_model(spec, 42);
    auto b = build_model(spec, 42);
    auto c = build_model(spec, 43);
    bool differs = false;
    for (std::size_t i = 0; i < a->params().size(); ++i) {
      EXPECT_EQ(a->params()[i].value, b->params()[i].value);
      differs = differs || a->params()[i].value != c->params()[i].value;
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Models, ForwardIsPureAndBatchIndependent) {
  auto model = build_model(ModelSpec{}, 3);
  Rng rng(4);
  const auto x = random_planes<float>(2, 64, 64, rng);
  EXPECT_EQ(model->forward(x), model->forward(x));
}

TEST(Models, ParameterRolesCoverAllParameters) {
  for (auto kind : {ArchKind::vit_tiny, ArchKind::unet}) {
    ModelSpec spec;
    spec.kind = kind;
    auto model = build_model(spec, 1);
    std::int64_t by_role = 0;
    for (auto role : kAllRoles)
      for (const auto& p : model->params())
        if (p.role == role) by_role += p.count();
    EXPECT_EQ(by_role, model->params().total_count());
  }
}

TEST(Models, ConvertRoundTripKeepsValues) {
  auto model = build_model(ModelSpec{}, 5);
  auto as_double = convert_model<double>(*model);
  auto back = convert_model<float>(*as_double);
  for (std::size_t i = 0; i < model->params().size(); ++i) EXPECT_EQ(model->params()[i].value, back->params()[i].value);
  Rng rng(1);
  const auto x = random_planes<float>(2, 64, 64, rng);
  EXPECT_EQ(model->forward(x), back->forward(x));
}

TEST(ModelSpec, ValidationAndJson) {
  ModelSpec s;
  s.vit.heads = 5;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ModelSpec{};
  s.in_channels = 4;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ModelSpec{};
  s.kind = ArchKind::unet;
  s.unet.stage_channels = {16, 0};
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_EQ(ModelSpec{}.unet.stage_channels, (std::vector<int>{32, 32, 64, 64}));
  for (auto kind : {ArchKind::vit_tiny, ArchKind::unet}) {
    ModelSpec t;
    t.kind = kind;
    t.in_channels = 3;
    EXPECT_EQ(model_spec_from_json(to_json(t)), t);
  }
  EXPECT_THROW(model_spec_from_json({{"arch", "resnet"}}), UnsupportedArchitecture);
}

}  // namespace
}  // namespace icefm
