// SPDX-License-Identifier: Apache-2.0
#include "icefm/adapt.hpp"

#include <functional>

#include "icefm/vit.hpp"

namespace icefm {

namespace {

TrainPlan make_plan(std::unique_ptr<Model> model, Strategy strategy, const std::function<bool(ParamRole)>& trainable) {
  TrainPlan plan;
  plan.strategy = strategy;
  for (auto& p : model->params()) {
    p.trainable = trainable(p.role);
    (p.trainable ? plan.trainable : plan.frozen).insert(p.path);
  }
  plan.model = std::move(model);
  plan.check_partition();
  return plan;
}

VitModel<float>& require_vit(Model& model, const char* strategy) {
  auto* vit = dynamic_cast<VitModel<float>*>(&model);
  if (!vit)
    throw UnsupportedArchitecture(std::string(strategy) + " requires a transformer encoder, got '" + to_string(model.spec().kind) + "'");
  return *vit;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::vpt: return "vpt";
    case Strategy::bitfit: return "bitfit";
    case Strategy::lora: return "lora";
    case Strategy::frozen_encoder: return "frozen_encoder";
    case Strategy::full: return "full";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (auto k : kAllStrategies)
    if (to_string(k) == s) return k;
  throw ValidationError("unknown strategy '" + s + "' (expected vpt|bitfit|lora|frozen_encoder|full)");
}

nlohmann::json to_json(const StrategyConfig& c) {
  nlohmann::json j{{"name", to_string(c.kind)}};
  if (c.kind == Strategy::vpt) j["vpt"] = {{"prompt_length", c.vpt.prompt_length}, {"per_layer", c.vpt.per_layer}};
  if (c.kind == Strategy::lora) {
    std::vector<std::string> targets;
    for (auto t : c.lora.targets) targets.emplace_back(to_string(t));
    j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}, {"targets", targets}};
  }
  return j;
}

StrategyConfig strategy_config_from_json(const nlohmann::json& j) {
  StrategyConfig c;
  c.kind = strategy_from_string(j.at("name").get<std::string>());
  if (j.contains("vpt")) {
    const auto& v = j.at("vpt");
    c.vpt.prompt_length = v.value("prompt_length", c.vpt.prompt_length);
    c.vpt.per_layer = v.value("per_layer", c.vpt.per_layer);
  }
  if (j.contains("lora")) {
    const auto& l = j.at("lora");
    c.lora.rank = l.value("rank", c.lora.rank);
    c.lora.alpha = l.value("alpha", c.lora.alpha);
    c.lora.dropout = l.value("dropout", c.lora.dropout);
    if (l.contains("targets")) {
      c.lora.targets.clear();
      for (const auto& t : l.at("targets")) c.lora.targets.push_back(param_role_from_string(t.get<std::string>()));
    }
  }
  c.vpt.validate();
  c.lora.validate();
  return c;
}

StrategyConfig strategy_config_from_any(const nlohmann::json& j) {
  if (j.is_string()) return strategy_config_from_json({{"name", j.get<std::string>()}});
  return strategy_config_from_json(j);
}

void TrainPlan::check_partition() const {
  std::int64_t seen = 0;
  for (const auto& p : model->params()) {
    const bool t = trainable.count(p.path) > 0;
    const bool f = frozen.count(p.path) > 0;
    if (t == f) throw ValidationError("plan partition: '" + p.path + "' must be in exactly one of trainable/frozen");
    if (t != p.trainable) throw ValidationError("plan partition: '" + p.path + "' flag disagrees with the plan");
    ++seen;
  }
  if (static_cast<std::size_t>(seen) != trainable.size() + frozen.size()) throw ValidationError("plan partition names unknown parameters");
}

TrainPlan apply_vpt(std::unique_ptr<Model> model, const VptConfig& cfg, Rng& rng) {
  auto& vit = require_vit(*model, "vpt");
  const std::int64_t added = vit.add_prompts(cfg, rng);
  auto plan = make_plan(std::move(model), Strategy::vpt, [](ParamRole r) { return r == ParamRole::prompt || r == ParamRole::decoder; });
  plan.added_param_count = added;
  return plan;
}

TrainPlan apply_bitfit(std::unique_ptr<Model> model) {
  auto plan = make_plan(std::move(model), Strategy::bitfit, [](ParamRole r) { return r == ParamRole::encoder_bias || r == ParamRole::decoder; });
  bool any_bias = false;
  for (const auto& p : plan.model->params()) any_bias = any_bias || p.role == ParamRole::encoder_bias;
  if (!any_bias) plan.warnings.emplace_back("bitfit: encoder has no bias terms; only the decoder is trainable");
  return plan;
}

TrainPlan apply_lora(std::unique_ptr<Model> model, const LoraConfig& cfg, Rng& rng) {
  auto& vit = require_vit(*model, "lora");
  const std::int64_t added = vit.add_lora(cfg, rng);
  auto plan = make_plan(std::move(model), Strategy::lora, [](ParamRole r) { return r == ParamRole::lora || r == ParamRole::decoder; });
  plan.added_param_count = added;
  return plan;
}

TrainPlan apply_frozen_encoder(std::unique_ptr<Model> model) {
  return make_plan(std::move(model), Strategy::frozen_encoder, [](ParamRole r) { return r == ParamRole::decoder; });
}

TrainPlan apply_full(std::unique_ptr<Model> model) {
  return make_plan(std::move(model), Strategy::full, [](ParamRole) { return true; });
}

TrainPlan apply_strategy(std::unique_ptr<Model> model, const StrategyConfig& cfg, Rng& rng) {
  switch (cfg.kind) {
    case Strategy::vpt: return apply_vpt(std::move(model), cfg.vpt, rng);
    case Strategy::bitfit: return apply_bitfit(std::move(model));
    case Strategy::lora: return apply_lora(std::move(model), cfg.lora, rng);
    case Strategy::frozen_encoder: return apply_frozen_encoder(std::move(model));
    case Strategy::full: return apply_full(std::move(model));
  }
  throw ValidationError("unknown strategy");
}

bool strategy_supported(Strategy s, ArchKind k) {
  return k == ArchKind::vit_tiny || (s != Strategy::vpt && s != Strategy::lora);
}

}  // namespace icefm
