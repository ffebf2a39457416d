// SPDX-License-Identifier: Apache-2.0
//
// Multi-teacher distillation: frozen per-season and per-region experts
// supervise a student through α·CE + (1−α)·mean KL.
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/loss.hpp"
#include "icefm/train.hpp"

namespace icefm {

/// The eight expert domains: four seasons, then four regions.
std::vector<std::string> expert_domains();

struct TeacherRef {
  std::filesystem::path checkpoint;
  std::string domain;
};

struct DistillConfig {
  KdOptions kd;
  std::vector<TeacherRef> teachers;
  ModelSpec student_spec = default_student_spec();
  TrainConfig train_cfg = default_student_train_config();

  /// Throws ValidationError naming the offending field.
  void validate() const;

  static ModelSpec default_student_spec();
  static TrainConfig default_student_train_config();
};

nlohmann::json to_json(const DistillConfig& c);
DistillConfig distill_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Frozen, forward-only teachers with their domain tags.
struct TeacherEnsemble {
  std::vector<std::unique_ptr<Model>> models;
  std::vector<std::string> domains;

  [[nodiscard]] std::size_t size() const { return models.size(); }
  void add(std::unique_ptr<Model> model, std::string domain);
  /// Throws ValidationError if a teacher is trainable or disagrees with the
  /// student on class_count or in_channels.
  void validate_for(const ModelSpec& student) const;

  static TeacherEnsemble load(const std::vector<TeacherRef>& refs);
};

struct ExpertConfig {
  ModelSpec base;
  StrategyConfig strategy;
  TrainConfig train;
  int patches_per_scene = 64;
  bool augment = true;
  std::filesystem::path out_dir;  // when set: one checkpoint per domain
};

/// Trains one expert per season and per region on the matching training
/// scenes. Validation uses the domain's validation scenes, or the whole
/// validation split when the domain has none.
TeacherEnsemble build_expert_teachers(const DatasetManifest& manifest, const ExpertConfig& cfg);

/// Per-sample KD loss for fit(); teacher logits are computed on the fly.
SampleLoss kd_sample_loss(const TeacherEnsemble& teachers, const KdOptions& opt);

/// Trains a fresh student on the given patches with the KD loss. With α = 1
/// this is exactly a plain fit with masked cross-entropy.
TrainResult distill(const DistillConfig& cfg, const TeacherEnsemble& teachers, const std::vector<Patch>& train,
                    const std::vector<Patch>& val, TrainPlan& student, const FitOptions& opt = {});

/// Header of the distillation result table: model,f1,acc,prec,rec,iou.
std::string table4_csv_header();
std::string table4_csv_row(const std::string& model, const MetricsReport& r);

}  // namespace icefm
