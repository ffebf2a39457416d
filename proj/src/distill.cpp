// SPDX-License-Identifier: Apache-2.0
#include "icefm/distill.hpp"

#include <algorithm>
#include <numeric>

#include "icefm/io.hpp"

namespace icefm {

std::vector<std::string> expert_domains() {
  std::vector<std::string> out;
  for (auto s : kSeasons) out.push_back(to_string(s));
  for (auto r : kRegions) out.push_back(to_string(r));
  return out;
}

ModelSpec DistillConfig::default_student_spec() {
  ModelSpec s;
  s.name = "unet_kd";
  s.kind = ArchKind::unet;
  s.in_channels = 2;
  return s;
}

TrainConfig DistillConfig::default_student_train_config() {
  TrainConfig c;
  c.weight_decay = 1e-2;
  c.scheduler = Scheduler::cosine;
  return c;
}

void DistillConfig::validate() const {
  kd.validate();
  student_spec.validate();
  train_cfg.validate();
}

nlohmann::json to_json(const DistillConfig& c) {
  nlohmann::json teachers = nlohmann::json::array();
  for (const auto& t : c.teachers) teachers.push_back({{"checkpoint", t.checkpoint.string()}, {"domain", t.domain}});
  return {{"alpha", c.kd.alpha},
          {"temperature", c.kd.temperature},
          {"scale_by_t_squared", c.kd.scale_by_t_squared},
          {"teachers", teachers},
          {"student", to_json(c.student_spec)},
          {"train", to_json(c.train_cfg)}};
}

DistillConfig distill_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  DistillConfig c;
  c.kd.alpha = j.value("alpha", c.kd.alpha);
  c.kd.temperature = j.value("temperature", c.kd.temperature);
  c.kd.scale_by_t_squared = j.value("scale_by_t_squared", c.kd.scale_by_t_squared);
  if (j.contains("teachers"))
    for (const auto& t : j.at("teachers")) {
      std::filesystem::path p = t.at("checkpoint").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.teachers.push_back({p, t.value("domain", std::string())});
    }
  if (j.contains("student")) c.student_spec = model_spec_from_json(j.at("student"));
  if (j.contains("train")) c.train_cfg = train_config_from_json(j.at("train"), c.train_cfg);
  c.validate();
  return c;
}

void TeacherEnsemble::add(std::unique_ptr<Model> model, std::string domain) {
  for (auto& p : model->params()) p.trainable = false;
  models.push_back(std::move(model));
  domains.push_back(std::move(domain));
}

void TeacherEnsemble::validate_for(const ModelSpec& student) const {
  if (models.empty()) throw ValidationError("distill: the teacher ensemble is empty");
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& spec = models[i]->spec();
    if (spec.class_count != student.class_count || spec.in_channels != student.in_channels)
      throw ValidationError("distill: teacher '" + domains[i] + "' has class_count " + std::to_string(spec.class_count) + " and in_channels " +
                            std::to_string(spec.in_channels) + "; the student expects " + std::to_string(student.class_count) + " and " +
                            std::to_string(student.in_channels));
    if (models[i]->params().trainable_count() != 0) throw ValidationError("distill: teacher '" + domains[i] + "' is not frozen");
  }
}

TeacherEnsemble TeacherEnsemble::load(const std::vector<TeacherRef>& refs) {
  TeacherEnsemble e;
  for (const auto& ref : refs) {
    auto loaded = load_checkpoint(ref.checkpoint);
    e.add(std::move(loaded.model), ref.domain.empty() ? loaded.meta.train_domain : ref.domain);
  }
  return e;
}

TeacherEnsemble build_expert_teachers(const DatasetManifest& manifest, const ExpertConfig& cfg) {
  cfg.base.validate();
  cfg.train.validate();
  struct Domain {
    std::string name;
    std::optional<Season> season;
    std::optional<Region> region;
  };
  std::vector<Domain> domains;
  for (auto s : kSeasons) domains.push_back({to_string(s), s, std::nullopt});
  for (auto r : kRegions) domains.push_back({to_string(r), std::nullopt, r});

  std::vector<std::string> missing;
  for (const auto& d : domains)
    if (manifest.split("train", d.season, d.region).empty()) missing.push_back(d.name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("expert teachers: no training scenes for domain(s): " + list);
  }

  const ChannelMode channels = channel_mode_for(cfg.base.in_channels);
  TeacherEnsemble ensemble;
  for (const auto& d : domains) {
    const std::uint64_t seed = derive_seed(cfg.train.seed, "teacher:" + d.name);
    const auto train = load_patches(manifest, manifest.split("train", d.season, d.region), PatchMode::random_train, cfg.patches_per_scene,
                                    cfg.augment, channels, seed);
    auto val_refs = manifest.split("val", d.season, d.region);
    if (val_refs.empty()) val_refs = manifest.split("val");
    if (val_refs.empty()) throw ValidationError("expert teachers: the manifest has no validation scenes");
    const auto val = load_patches(manifest, val_refs, PatchMode::tiled_eval, 0, false, channels, seed);

    Rng rng(derive_seed(seed, "init"));
    auto plan = apply_strategy(build_model<float>(cfg.base, rng), cfg.strategy, rng);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    FitOptions opt;
    opt.meta = {to_string(cfg.strategy.kind), d.name, {}};
    if (!cfg.out_dir.empty()) opt.out_dir = cfg.out_dir / d.name;
    fit(plan, train, val, tc, opt);
    ensemble.add(std::move(plan.model), d.name);
  }
  return ensemble;
}

SampleLoss kd_sample_loss(const TeacherEnsemble& teachers, const KdOptions& opt) {
  opt.validate();
  if (teachers.size() == 0) throw ValidationError("distill: the teacher ensemble is empty");
  return [&teachers, opt](const Patch& sample, const Planes<float>& logits, double inv_valid, Planes<float>& grad) {
    std::vector<std::vector<Planes<float>>> t(teachers.size());
    for (std::size_t i = 0; i < teachers.size(); ++i) t[i].push_back(teachers.models[i]->forward(sample.channels));
    const double m = static_cast<double>(teachers.size());
    double loss = opt.alpha * ce_sum(logits, sample.labels, opt.alpha * inv_valid, &grad) * inv_valid;
    const double kl_scale = (1.0 - opt.alpha) * opt.kl_factor() / m;
    double kl = 0.0;
    for (std::size_t i : canonical_teacher_order(t)) kl += kl_sum(logits, t[i][0], sample.labels, opt.temperature, kl_scale * inv_valid, &grad);
    return loss + kl_scale * kl * inv_valid;
  };
}

TrainResult distill(const DistillConfig& cfg, const TeacherEnsemble& teachers, const std::vector<Patch>& train,
                    const std::vector<Patch>& val, TrainPlan& student, const FitOptions& opt) {
  cfg.validate();
  teachers.validate_for(student.model->spec());
  FitOptions o = opt;
  o.loss = cfg.kd.alpha == 1.0 ? cross_entropy_loss() : kd_sample_loss(teachers, cfg.kd);
  if (o.meta.strategy.empty()) o.meta.strategy = "kd";
  return fit(student, train, val, cfg.train_cfg, o);
}

std::string table4_csv_header() { return "model,f1,acc,prec,rec,iou"; }

std::string table4_csv_row(const std::string& model, const MetricsReport& r) {
  return csv_line({model, format_metric(r.weighted_f1), format_metric(r.accuracy), format_metric(r.weighted_precision),
                   format_metric(r.weighted_recall), format_metric(r.weighted_iou)});
}

}  // namespace icefm
