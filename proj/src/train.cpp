// SPDX-License-Identifier: Apache-2.0
#include "icefm/train.hpp"

#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <sstream>

#include "icefm/io.hpp"
#include "icefm/loss.hpp"

namespace icefm {

namespace {

std::string scheduler_name(Scheduler s) { return s == Scheduler::step ? "step" : "cosine"; }

Scheduler scheduler_from_string(const std::string& s) {
  if (s == "step") return Scheduler::step;
  if (s == "cosine") return Scheduler::cosine;
  throw ValidationError("train.scheduler must be 'step' or 'cosine', got '" + s + "'");
}

/// Runs body(i) for i in [0, n) in parallel and rethrows the first failure.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<RowMatrix<float>> snapshot(const ParameterSet<float>& ps) {
  std::vector<RowMatrix<float>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.value);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train.lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
  if (!(step_gamma > 0.0)) throw ValidationError("train.step_gamma must be > 0");
  if (step_every < 1) throw ValidationError("train.step_every must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("train.patience must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"scheduler", scheduler_name(c.scheduler)},
          {"step_gamma", c.step_gamma},
          {"step_every", c.step_every},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("scheduler")) c.scheduler = scheduler_from_string(j.at("scheduler").get<std::string>());
  c.step_gamma = j.value("step_gamma", c.step_gamma);
  c.step_every = j.value("step_every", c.step_every);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  if (cfg.scheduler == Scheduler::step) return cfg.lr * std::pow(cfg.step_gamma, epoch / cfg.step_every);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.max_epochs));
}

AdamW::AdamW(const ParameterSet<float>& params, double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps), m_(params.size()), v_(params.size()) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    m_[i] = RowMatrix<float>::Zero(params[i].value.rows(), params[i].value.cols());
    v_[i] = m_[i];
  }
}

void AdamW::step(ParameterSet<float>& params, const Gradients<float>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float decay = static_cast<float>(1.0 - lr * wd_);
  const float step = static_cast<float>(lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_), eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].size() == 0) continue;
    auto& p = params[i].value;
    const auto& g = grads.slots[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    if (wd_ != 0.0) p *= decay;
    p.array() -= step * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_c2 + eps);
  }
}

std::int64_t AdamW::state_bytes() const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < m_.size(); ++i) n += static_cast<std::int64_t>(m_[i].size() + v_[i].size()) * sizeof(float);
  return n;
}

bool EarlyStopper::update(double value) {
  ++epoch_;
  if (best_epoch_ < 0 || value < best_ - min_delta_) {
    best_ = value;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

SampleLoss cross_entropy_loss() {
  return [](const Patch& sample, const Planes<float>& logits, double inv_valid, Planes<float>& grad) {
    return ce_sum(logits, sample.labels, inv_valid, &grad) * inv_valid;
  };
}

TrainResult fit(TrainPlan& plan, const std::vector<Patch>& train, const std::vector<Patch>& val, const TrainConfig& cfg,
                const FitOptions& opt) {
  cfg.validate();
  if (train.empty()) throw ValidationError("fit: training stream is empty");
  if (val.empty()) throw ValidationError("fit: validation stream is empty");
  plan.check_partition();
  Model& model = *plan.model;
  auto& params = model.params();
  const SampleLoss loss = opt.loss ? opt.loss : cross_entropy_loss();
  AdamW adam(params, cfg.weight_decay);
  EarlyStopper stopper(cfg.patience);
  std::vector<RowMatrix<float>> best = snapshot(params);
  TrainResult result;

  Sampler sampler(opt.profiler);
  sampler.start();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int epoch = 0;
  for (; epoch < cfg.max_epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);
    const std::uint64_t epoch_seed = derive_seed(derive_seed(cfg.seed, "dropout"), static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::int64_t loss_pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::int64_t valid = 0;
      for (std::size_t k = 0; k < n; ++k) valid += count_valid(train[order[start + k]].labels);
      if (valid == 0) {
        ++result.flagged_batches;
        continue;
      }
      const double inv = 1.0 / static_cast<double>(valid);
      std::vector<Gradients<float>> grads(n);
      std::vector<double> contrib(n, 0.0);
      parallel_for(n, [&](std::size_t k) {
        const Patch& sample = train[order[start + k]];
        Rng rng(derive_seed(epoch_seed, static_cast<std::uint64_t>(start + k)));
        std::unique_ptr<Tape> tape;
        const Planes<float> logits = model.forward(sample.channels, Mode::train, &rng, &tape);
        Planes<float> dlogits(logits.channels, logits.height, logits.width);
        contrib[k] = loss(sample, logits, inv, dlogits);
        grads[k] = Gradients<float>::for_trainable(params);
        model.backward(*tape, dlogits, grads[k]);
      });
      double batch_loss = 0.0;
      for (double c : contrib) batch_loss += c;
      if (!std::isfinite(batch_loss))
        throw TrainingError("fit: non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      for (std::size_t k = 1; k < n; ++k) grads[0].add(grads[k]);
      adam.step(params, grads[0], lr);
      loss_sum += batch_loss * static_cast<double>(valid);
      loss_pixels += valid;
    }
    if (loss_pixels == 0) throw TrainingError("fit: training stream has no labelled pixels");
    const double val_loss = evaluate_loss(model, val);
    if (!std::isfinite(val_loss)) throw TrainingError("fit: non-finite validation loss at epoch " + std::to_string(epoch));
    const EpochRecord rec{epoch, loss_sum / static_cast<double>(loss_pixels), val_loss, lr};
    result.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
    if (stopper.update(val_loss)) best = snapshot(params);
    if (stopper.should_stop()) {
      ++epoch;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i];

  result.efficiency = sampler.stop(Phase::train);
  result.efficiency.epochs = epoch;
  result.efficiency.minutes_per_epoch = result.efficiency.total_minutes / std::max(epoch, 1);
  result.efficiency.trainable_params = params.trainable_count();
  result.efficiency.optimizer_state_bytes = adam.state_bytes();
  result.stopped_epoch = epoch - 1;
  result.best_epoch = stopper.best_epoch();
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    result.best_checkpoint = opt.out_dir / "best.ckpt";
    CheckpointMeta meta = opt.meta;
    if (meta.strategy.empty()) meta.strategy = to_string(plan.strategy);
    save_checkpoint(model, meta, result.best_checkpoint);
    write_text_file(opt.out_dir / "history.csv", history_csv(result.history));
  }
  return result;
}

double evaluate_loss(const Model& model, const std::vector<Patch>& data) {
  std::vector<double> sums(data.size(), 0.0);
  std::int64_t valid = 0;
  for (const auto& p : data) valid += count_valid(p.labels);
  if (valid == 0) throw ValidationError("evaluation stream has no labelled pixels");
  parallel_for(data.size(), [&](std::size_t i) { sums[i] = ce_sum(model.forward(data[i].channels), data[i].labels); });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(valid);
}

ConfusionMatrix evaluate(const Model& model, const std::vector<Patch>& data) {
  const int k = model.spec().class_count;
  std::vector<ConfusionMatrix> shards(data.size(), ConfusionMatrix(k));
  parallel_for(data.size(), [&](std::size_t i) { shards[i].accumulate(data[i].labels, argmax_labels(model.forward(data[i].channels))); });
  ConfusionMatrix cm(k);
  for (const auto& s : shards) cm.merge_from(s);
  return cm;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    out << buf;
  }
  return out.str();
}

}  // namespace icefm
