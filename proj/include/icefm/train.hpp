// SPDX-License-Identifier: Apache-2.0
//
// Deterministic training loop: masked cross-entropy (or a pluggable
// per-sample loss), AdamW, step or cosine schedule and early stopping.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/adapt.hpp"
#include "icefm/checkpoint.hpp"
#include "icefm/metrics.hpp"
#include "icefm/profiler.hpp"
#include "icefm/sardata.hpp"

namespace icefm {

enum class Scheduler { step, cosine };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  Scheduler scheduler = Scheduler::step;
  double step_gamma = 0.9;
  int step_every = 10;
  int batch_size = 8;
  int max_epochs = 30;
  int patience = 20;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Learning rate for a 0-based epoch.
double scheduled_lr(const TrainConfig& cfg, int epoch);

/// AdamW with decoupled weight decay; moments exist only for trainable tensors.
class AdamW {
 public:
  AdamW(const ParameterSet<float>& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ParameterSet<float>& params, const Gradients<float>& grads, double lr);
  [[nodiscard]] std::int64_t state_bytes() const;
  [[nodiscard]] std::int64_t steps() const { return t_; }

 private:
  double wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<RowMatrix<float>> m_, v_;
};

/// Stops after `patience` consecutive epochs without an improvement of more
/// than min_delta in the monitored value.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}

  /// Records the value for the next epoch; true means it is the new best.
  bool update(double value);
  [[nodiscard]] bool should_stop() const { return stale_ >= patience_; }
  [[nodiscard]] int best_epoch() const { return best_epoch_; }
  [[nodiscard]] double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  int epoch_ = -1;
  int best_epoch_ = -1;
  int stale_ = 0;
  double best_ = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

/// Per-sample loss: returns the sample's contribution to the batch loss and
/// adds its gradient w.r.t. the logits into grad. inv_valid is one over the
/// number of non-ignored pixels in the whole batch.
using SampleLoss = std::function<double(const Patch& sample, const Planes<float>& logits, double inv_valid, Planes<float>& grad)>;

SampleLoss cross_entropy_loss();

struct FitOptions {
  SampleLoss loss;                    // defaults to masked cross-entropy
  std::filesystem::path out_dir;      // when set: best.ckpt and history.csv
  CheckpointMeta meta;
  ProfilerOptions profiler;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::vector<EpochRecord> history;
  int stopped_epoch = 0;
  int best_epoch = 0;
  std::int64_t flagged_batches = 0;
  EfficiencyRecord efficiency;
};

/// Optimizes the plan's trainable parameters. On return plan.model holds the
/// parameters of the epoch with the lowest validation loss.
TrainResult fit(TrainPlan& plan, const std::vector<Patch>& train, const std::vector<Patch>& val, const TrainConfig& cfg,
                const FitOptions& opt = {});

/// Mean masked cross-entropy over all non-ignored pixels.
double evaluate_loss(const Model& model, const std::vector<Patch>& data);

/// Confusion matrix of argmax predictions.
ConfusionMatrix evaluate(const Model& model, const std::vector<Patch>& data);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace icefm
