// SPDX-License-Identifier: Apache-2.0
//
// Segmentation model interface, model specs, and the architecture registry.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/errors.hpp"
#include "icefm/nn/params.hpp"
#include "icefm/rng.hpp"
#include "icefm/tensor.hpp"

namespace icefm {

enum class ArchKind { vit_tiny, unet };

std::string to_string(ArchKind k);
ArchKind arch_kind_from_string(const std::string& s);

struct VitSpec {
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int image_size = 64;  // square input side; fixes the positional table
  bool bias = true;     // false together with norm=false gives the norm-free variant
  bool norm = true;

  friend bool operator==(const VitSpec&, const VitSpec&) = default;
};

struct UnetSpec {
  std::vector<int> stage_channels{32, 32, 64, 64};

  friend bool operator==(const UnetSpec&, const UnetSpec&) = default;
};

struct ModelSpec {
  std::string name = "model";
  ArchKind kind = ArchKind::vit_tiny;
  int in_channels = 2;
  int class_count = 6;
  VitSpec vit;
  UnetSpec unet;

  /// Throws ValidationError naming the first invalid field.
  void validate() const;
  /// Input side lengths the architecture accepts must be multiples of this.
  [[nodiscard]] int size_multiple() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

nlohmann::json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j);

enum class Mode { eval, train };

/// Activations recorded by a forward pass for the matching backward pass.
class Tape {
 public:
  virtual ~Tape() = default;
};

/// A per-pixel classifier C×h×w → K×h×w with named parameters.
///
/// forward() is const and has no hidden state; concurrent forward calls on a
/// shared model are safe. Training mode only changes adapter dropout, which
/// draws from the caller-supplied rng.
template <typename S>
class SegmentationModel {
 public:
  explicit SegmentationModel(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~SegmentationModel() = default;

  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }

  /// When tape is non-null it receives what backward() needs.
  virtual Planes<S> forward(const Planes<S>& input, Mode mode = Mode::eval, Rng* rng = nullptr,
                            std::unique_ptr<Tape>* tape = nullptr) const = 0;

  /// Accumulates parameter gradients for d(loss)/d(logits) into the allocated
  /// slots of grads.
  virtual void backward(const Tape& tape, const Planes<S>& dlogits, Gradients<S>& grads) const = 0;

  [[nodiscard]] virtual std::unique_ptr<SegmentationModel> clone() const = 0;

  /// Structural additions made by fine-tuning strategies, for checkpoints.
  [[nodiscard]] virtual nlohmann::json structure() const { return nlohmann::json::object(); }

 protected:
  ModelSpec spec_;
  ParameterSet<S> params_;
};

using Model = SegmentationModel<float>;

/// Builds a freshly initialized model; identical seeds give bit-identical parameters.
template <typename S>
std::unique_ptr<SegmentationModel<S>> build_model(const ModelSpec& spec, Rng& rng);

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Re-types a model (e.g. to double for gradient checks), keeping its
/// structure and parameter values.
template <typename T, typename S>
std::unique_ptr<SegmentationModel<T>> convert_model(const SegmentationModel<S>& model);

/// Per-pixel argmax of a K×h×w logit map.
template <typename S>
LabelRaster argmax_labels(const Planes<S>& logits) {
  LabelRaster out(logits.height, logits.width);
  for (Eigen::Index px = 0; px < logits.pixels(); ++px) {
    Eigen::Index best = 0;
    logits.data.col(px).maxCoeff(&best);
    out.data[static_cast<std::size_t>(px)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace icefm
