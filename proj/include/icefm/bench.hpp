// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers: the model×strategy grid, season/region transfer
// matrices, the training-set-size sweep and the distillation comparison,
// plus their CSV reports.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/adapt.hpp"
#include "icefm/distill.hpp"
#include "icefm/io.hpp"
#include "icefm/metrics.hpp"
#include "icefm/profiler.hpp"
#include "icefm/train.hpp"

namespace icefm {

/// Where training patches come from.
struct DataSpec {
  std::filesystem::path manifest;  // manifest.json of a generated dataset
  int patches_per_scene = 32;
  bool augment = true;
};

/// One benchmark cell outcome. status is "ok", "skipped" or "failed".
struct BenchRow {
  std::string model;
  std::string strategy;
  int channels = 2;
  std::string train_domain = "all";
  std::string test_domain = "all";
  std::int64_t size = 0;  // training patches
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string status = "ok";
  std::string note;
  MetricsReport metrics;
  std::int64_t trainable_params = 0;
  std::int64_t optimizer_state_bytes = 0;
  int best_epoch = 0;
  int epochs = 0;
};

/// Deterministic report columns; efficiency timings live in a separate file.
std::string report_csv_header();
std::string report_csv_line(const BenchRow& row);
std::vector<BenchRow> read_report(const std::filesystem::path& file);
void write_report(const std::filesystem::path& file, const std::vector<BenchRow>& rows);

struct EfficiencyRow {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string model;
  std::string strategy;
  EfficiencyRecord train;
  std::optional<EfficiencyRecord> inference;
};

struct BenchOptions {
  int jobs = 1;
  std::function<void(const std::string&)> log;
};

struct GridSpec {
  DataSpec data;
  std::vector<ModelSpec> models;
  std::vector<StrategyConfig> strategies;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

nlohmann::json to_json(const GridSpec& g);
/// Relative dataset paths are resolved against base_dir.
GridSpec grid_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<EfficiencyRow> efficiency;
  int executed = 0;  // cells run in this invocation (the rest were reused)
};

/// Runs every (model, strategy, seed) cell and writes report.csv,
/// efficiency.csv and radar.csv into out_dir. Cells already present in an
/// existing report.csv with status ok or skipped are reused.
BenchReport run_grid(const GridSpec& spec, const std::filesystem::path& out_dir, const BenchOptions& opt = {});

/// strategy × model matrix of mean weighted F1 over the ok rows.
CsvTable radar_table(const std::vector<BenchRow>& rows);
/// Rows grouped by strategy section in the canonical strategy order.
CsvTable table2_table(const std::vector<BenchRow>& rows);

enum class TransferAxis { season, region };

struct TransferSpec {
  DataSpec data;
  TransferAxis axis = TransferAxis::season;
  std::vector<std::string> train_domains;  // defaults per axis when empty
  std::vector<std::string> test_domains;   // defaults per axis when empty; "all" = every test scene
  ModelSpec base;
  StrategyConfig strategy;  // full fine-tuning by default
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};

  /// Fills default domains and validates them against the axis.
  void resolve();
};

nlohmann::json to_json(const TransferSpec& t);
TransferSpec transfer_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct TransferResult {
  std::vector<std::string> train_domains, test_domains;
  /// f1[seed index][train][test]
  std::vector<std::vector<std::vector<double>>> f1;
  std::vector<BenchRow> rows;

  /// Median over seeds of each cell.
  [[nodiscard]] std::vector<std::vector<double>> median_f1() const;
};

/// Writes transfer_matrix.csv (median F1), transfer_long.csv (per seed,
/// with per-class F1) and report.csv into out_dir.
TransferResult run_transfer(const TransferSpec& spec, const std::filesystem::path& out_dir, const BenchOptions& opt = {});

CsvTable transfer_matrix_table(const std::vector<std::string>& train, const std::vector<std::string>& test,
                               const std::vector<std::vector<double>>& f1);

struct SweepSpec {
  DataSpec data;
  std::vector<int> sizes{50, 100, 200, 500, 1000, 5000};
  ModelSpec base;
  StrategyConfig strategy;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

nlohmann::json to_json(const SweepSpec& s);
SweepSpec sweep_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct SweepPoint {
  int size = 0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

/// Writes sweep.csv (every size and seed) and report.csv into out_dir.
std::vector<SweepPoint> run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir, const BenchOptions& opt = {});

struct KdExperimentSpec {
  DataSpec data;
  DistillConfig distill;  // teachers empty: experts are trained per seed
  ExpertConfig experts;
  bool baseline = true;  // also train the student on hard labels only
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

nlohmann::json to_json(const KdExperimentSpec& k);
KdExperimentSpec kd_experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct KdExperimentResult {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> kd, ce;  // per seed; ce empty without a baseline
};

/// Trains (or loads) the experts, then the distilled student and the
/// hard-label baseline from the same initialization; writes table4.csv
/// (median over seeds) and report.csv (one row per seed and student) into
/// out_dir.
KdExperimentResult run_kd_experiment(const KdExperimentSpec& spec, const std::filesystem::path& out_dir, const BenchOptions& opt = {});

/// First `size` entries of a seeded permutation of [0, pool).
std::vector<std::size_t> subsample_indices(std::size_t pool, std::size_t size, std::uint64_t seed);

double median(std::vector<double> v);

}  // namespace icefm
