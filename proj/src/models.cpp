// SPDX-License-Identifier: Apache-2.0
#include "icefm/model.hpp"

#include "icefm/unet.hpp"
#include "icefm/vit.hpp"

namespace icefm {

std::string to_string(ArchKind k) { return k == ArchKind::vit_tiny ? "vit_tiny" : "unet"; }

ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "vit_tiny") return ArchKind::vit_tiny;
  if (s == "unet") return ArchKind::unet;
  throw UnsupportedArchitecture("unknown architecture '" + s + "'");
}

void ModelSpec::validate() const {
  if (name.empty()) throw ValidationError("model.name must not be empty");
  if (in_channels != 2 && in_channels != 3) throw ValidationError("model.in_channels must be 2 or 3");
  if (class_count < 2 || class_count > 254) throw ValidationError("model.class_count must be in [2, 254]");
  if (kind == ArchKind::vit_tiny) {
    if (vit.patch_size < 1) throw ValidationError("model.vit.patch_size must be >= 1");
    if (vit.embed_dim < 1) throw ValidationError("model.vit.embed_dim must be >= 1");
    if (vit.depth < 1) throw ValidationError("model.vit.depth must be >= 1");
    if (vit.heads < 1 || vit.embed_dim % vit.heads != 0) throw ValidationError("model.vit.heads must divide embed_dim");
    if (vit.mlp_ratio < 1) throw ValidationError("model.vit.mlp_ratio must be >= 1");
    if (vit.image_size < vit.patch_size || vit.image_size % vit.patch_size != 0)
      throw ValidationError("model.vit.image_size must be a positive multiple of patch_size");
    if (vit.norm != vit.bias) throw ValidationError("model.vit.bias and model.vit.norm must be set together");
  } else {
    if (unet.stage_channels.size() < 2) throw ValidationError("model.unet.stage_channels needs at least two stages");
    for (int c : unet.stage_channels)
      if (c < 1) throw ValidationError("model.unet.stage_channels must be positive");
  }
}

int ModelSpec::size_multiple() const {
  if (kind == ArchKind::vit_tiny) return vit.patch_size;
  return 1 << (unet.stage_channels.size() - 1);
}

nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j{{"name", s.name}, {"arch", to_string(s.kind)}, {"in_channels", s.in_channels}, {"class_count", s.class_count}};
  if (s.kind == ArchKind::vit_tiny)
    j["vit"] = {{"patch_size", s.vit.patch_size}, {"embed_dim", s.vit.embed_dim}, {"depth", s.vit.depth},   {"heads", s.vit.heads},
                {"mlp_ratio", s.vit.mlp_ratio},   {"image_size", s.vit.image_size}, {"bias", s.vit.bias}, {"norm", s.vit.norm}};
  else
    j["unet"] = {{"stage_channels", s.unet.stage_channels}};
  return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.name = j.value("name", s.name);
  s.kind = arch_kind_from_string(j.value("arch", to_string(s.kind)));
  s.in_channels = j.value("in_channels", s.in_channels);
  s.class_count = j.value("class_count", s.class_count);
  if (j.contains("vit")) {
    const auto& v = j.at("vit");
    s.vit.patch_size = v.value("patch_size", s.vit.patch_size);
    s.vit.embed_dim = v.value("embed_dim", s.vit.embed_dim);
    s.vit.depth = v.value("depth", s.vit.depth);
    s.vit.heads = v.value("heads", s.vit.heads);
    s.vit.mlp_ratio = v.value("mlp_ratio", s.vit.mlp_ratio);
    s.vit.image_size = v.value("image_size", s.vit.image_size);
    s.vit.bias = v.value("bias", s.vit.bias);
    s.vit.norm = v.value("norm", s.vit.norm);
  }
  if (j.contains("unet")) s.unet.stage_channels = j.at("unet").value("stage_channels", s.unet.stage_channels);
  s.validate();
  return s;
}

template <typename S>
std::unique_ptr<SegmentationModel<S>> build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind == ArchKind::vit_tiny) return std::make_unique<VitModel<S>>(spec, rng);
  return std::make_unique<UnetModel<S>>(spec, rng);
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "model_init"));
  return build_model<float>(spec, rng);
}

template <typename T, typename S>
std::unique_ptr<SegmentationModel<T>> convert_model(const SegmentationModel<S>& model) {
  if (const auto* v = dynamic_cast<const VitModel<S>*>(&model)) return std::make_unique<VitModel<T>>(*v);
  if (const auto* u = dynamic_cast<const UnetModel<S>*>(&model)) return std::make_unique<UnetModel<T>>(*u);
  throw UnsupportedArchitecture("convert_model: unknown model type");
}

template std::unique_ptr<SegmentationModel<float>> build_model<float>(const ModelSpec&, Rng&);
template std::unique_ptr<SegmentationModel<double>> build_model<double>(const ModelSpec&, Rng&);
template std::unique_ptr<SegmentationModel<double>> convert_model<double, float>(const SegmentationModel<float>&);
template std::unique_ptr<SegmentationModel<float>> convert_model<float, double>(const SegmentationModel<double>&);
template std::unique_ptr<SegmentationModel<float>> convert_model<float, float>(const SegmentationModel<float>&);

}  // namespace icefm
