// SPDX-License-Identifier: Apache-2.0
//
// Fine-tuning strategies as transforms from a built model to a TrainPlan:
// a trainable/frozen partition of the parameters plus structural additions.
#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/adapt_config.hpp"
#include "icefm/model.hpp"

namespace icefm {

enum class Strategy { vpt, bitfit, lora, frozen_encoder, full };

inline constexpr Strategy kAllStrategies[] = {Strategy::vpt, Strategy::bitfit, Strategy::lora, Strategy::frozen_encoder, Strategy::full};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct StrategyConfig {
  Strategy kind = Strategy::full;
  VptConfig vpt;
  LoraConfig lora;
};

nlohmann::json to_json(const StrategyConfig& c);
StrategyConfig strategy_config_from_json(const nlohmann::json& j);
/// Parses either a bare strategy name or an object with "name" and options.
StrategyConfig strategy_config_from_any(const nlohmann::json& j);

struct TrainPlan {
  std::unique_ptr<Model> model;
  std::set<std::string> trainable;
  std::set<std::string> frozen;
  Strategy strategy = Strategy::full;
  std::int64_t added_param_count = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] std::int64_t trainable_count() const { return model->params().trainable_count(); }
  /// Throws ValidationError unless trainable and frozen partition all parameters.
  void check_partition() const;
};

/// Prompt tokens per layer (deep) or at the input; encoder frozen.
TrainPlan apply_vpt(std::unique_ptr<Model> model, const VptConfig& cfg, Rng& rng);
/// Encoder bias terms and the decoder trainable.
TrainPlan apply_bitfit(std::unique_ptr<Model> model);
/// Low-rank adapters on the targeted attention projections; backbone frozen.
TrainPlan apply_lora(std::unique_ptr<Model> model, const LoraConfig& cfg, Rng& rng);
/// Decoder only.
TrainPlan apply_frozen_encoder(std::unique_ptr<Model> model);
/// Everything trainable.
TrainPlan apply_full(std::unique_ptr<Model> model);

TrainPlan apply_strategy(std::unique_ptr<Model> model, const StrategyConfig& cfg, Rng& rng);

/// True when the strategy can be applied to the architecture.
bool strategy_supported(Strategy s, ArchKind k);

}  // namespace icefm
