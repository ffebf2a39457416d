// SPDX-License-Identifier: Apache-2.0
//
// Masked cross-entropy and the multi-teacher distillation loss. Losses are
// accumulated in double; gradients are written in the logits' scalar type.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "icefm/errors.hpp"
#include "icefm/tensor.hpp"

namespace icefm {

inline std::int64_t count_valid(const LabelRaster& labels) {
  return std::count_if(labels.data.begin(), labels.data.end(), [](std::uint8_t v) { return v != kIgnoreLabel; });
}

namespace detail {

template <typename S>
void check_shapes(const Planes<S>& logits, const LabelRaster& labels) {
  if (logits.height != labels.height || logits.width != labels.width)
    throw ValidationError("loss: logits are " + std::to_string(logits.height) + "x" + std::to_string(logits.width) + " but labels are " +
                          std::to_string(labels.height) + "x" + std::to_string(labels.width));
}

/// Log-softmax of column px at temperature t, written into out (length K).
template <typename S>
void log_softmax_col(const Planes<S>& logits, Eigen::Index px, double t, std::vector<double>& out) {
  const int k = logits.channels;
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(logits.data(c, px)) / t);
  double sum = 0.0;
  for (int c = 0; c < k; ++c) sum += std::exp(static_cast<double>(logits.data(c, px)) / t - mx);
  const double lse = mx + std::log(sum);
  for (int c = 0; c < k; ++c) out[c] = static_cast<double>(logits.data(c, px)) / t - lse;
}

}  // namespace detail

/// Sum over non-ignored pixels of −log softmax(logits)[label]. When grad is
/// non-null, grad_scale·(softmax − onehot) is added at valid pixels.
template <typename S>
double ce_sum(const Planes<S>& logits, const LabelRaster& labels, double grad_scale = 0.0, Planes<S>* grad = nullptr) {
  detail::check_shapes(logits, labels);
  const int k = logits.channels;
  std::vector<double> lsm(k);
  double total = 0.0;
  for (Eigen::Index px = 0; px < logits.pixels(); ++px) {
    const std::uint8_t y = labels.data[static_cast<std::size_t>(px)];
    if (y == kIgnoreLabel) continue;
    if (y >= k) throw ValidationError("loss: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    detail::log_softmax_col(logits, px, 1.0, lsm);
    total -= lsm[y];
    if (grad)
      for (int c = 0; c < k; ++c) grad->data(c, px) += static_cast<S>(grad_scale * (std::exp(lsm[c]) - (c == y ? 1.0 : 0.0)));
  }
  return total;
}

/// Sum over non-ignored pixels of KL(softmax(teacher/T) ‖ softmax(student/T)).
/// When grad is non-null, grad_scale·(p_s − p_t)/T is added at valid pixels.
template <typename S>
double kl_sum(const Planes<S>& student, const Planes<S>& teacher, const LabelRaster& labels, double temperature, double grad_scale = 0.0,
              Planes<S>* grad = nullptr) {
  detail::check_shapes(student, labels);
  if (teacher.channels != student.channels || teacher.height != student.height || teacher.width != student.width)
    throw ValidationError("kd loss: teacher and student logits differ in shape");
  const int k = student.channels;
  std::vector<double> ls(k), lt(k);
  double total = 0.0;
  for (Eigen::Index px = 0; px < student.pixels(); ++px) {
    if (labels.data[static_cast<std::size_t>(px)] == kIgnoreLabel) continue;
    detail::log_softmax_col(student, px, temperature, ls);
    detail::log_softmax_col(teacher, px, temperature, lt);
    double kl = 0.0;
    for (int c = 0; c < k; ++c) kl += std::exp(lt[c]) * (lt[c] - ls[c]);
    total += kl;
    if (grad)
      for (int c = 0; c < k; ++c) grad->data(c, px) += static_cast<S>(grad_scale * (std::exp(ls[c]) - std::exp(lt[c])) / temperature);
  }
  return total;
}

template <typename S>
struct LossResult {
  double loss = 0.0;
  std::int64_t valid = 0;
  bool flagged = false;  // every pixel was ignored
  std::vector<Planes<S>> grad;
};

/// Mean over all non-ignored pixels of the batch; a fully ignored batch gives
/// loss 0 with flagged set.
template <typename S>
LossResult<S> masked_cross_entropy(const std::vector<Planes<S>>& logits, const std::vector<LabelRaster>& labels, bool with_grad = true) {
  if (logits.size() != labels.size()) throw ValidationError("loss: batch sizes differ");
  LossResult<S> r;
  for (const auto& l : labels) r.valid += count_valid(l);
  r.flagged = r.valid == 0;
  const double inv = r.valid > 0 ? 1.0 / static_cast<double>(r.valid) : 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Planes<S>* g = nullptr;
    if (with_grad) {
      r.grad.emplace_back(logits[i].channels, logits[i].height, logits[i].width);
      g = &r.grad.back();
    }
    total += ce_sum(logits[i], labels[i], inv, g);
  }
  r.loss = total * inv;
  return r;
}

struct KdOptions {
  double alpha = 0.5;
  double temperature = 3.0;
  bool scale_by_t_squared = false;  // off: the loss is α·CE + (1−α)·mean KL verbatim

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("kd.alpha must be in [0, 1]");
    if (!(temperature > 0.0)) throw ValidationError("kd.temperature must be > 0");
  }
  [[nodiscard]] double kl_factor() const { return scale_by_t_squared ? temperature * temperature : 1.0; }
};

/// Lexicographic comparison of two logit batches, used to put teachers into
/// a canonical summation order.
template <typename S>
bool logits_less(const std::vector<Planes<S>>& a, const std::vector<Planes<S>>& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    const S* pa = a[i].data.data();
    const S* pb = b[i].data.data();
    const auto n = std::min(a[i].data.size(), b[i].data.size());
    for (Eigen::Index j = 0; j < n; ++j)
      if (pa[j] != pb[j]) return pa[j] < pb[j];
  }
  return a.size() < b.size();
}

/// Teacher indices sorted by their logits; sums taken in this order do not
/// depend on the order teachers were supplied in.
template <typename S>
std::vector<std::size_t> canonical_teacher_order(const std::vector<std::vector<Planes<S>>>& teachers) {
  std::vector<std::size_t> order(teachers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return logits_less(teachers[i], teachers[j]); });
  return order;
}

template <typename S>
struct KdResult : LossResult<S> {
  double ce = 0.0;
  double kl = 0.0;                 // mean over teachers of the per-teacher mean KL
  std::vector<double> teacher_kl;  // per teacher, in the order supplied
};

/// α·CE + (1−α)·(1/M)·Σ_i KL(σ(z_i/T) ‖ σ(S/T)); KL is averaged over the
/// non-ignored pixels of the batch. teachers[m][b] holds teacher m's logits
/// for sample b.
template <typename S>
KdResult<S> kd_loss(const std::vector<Planes<S>>& student, const std::vector<std::vector<Planes<S>>>& teachers,
                    const std::vector<LabelRaster>& labels, const KdOptions& opt, bool with_grad = true) {
  opt.validate();
  if (teachers.empty()) throw ValidationError("kd loss: at least one teacher is required");
  for (const auto& t : teachers)
    if (t.size() != student.size()) throw ValidationError("kd loss: teacher batch size differs from the student's");
  const auto ce = masked_cross_entropy(student, labels, false);
  KdResult<S> r;
  r.valid = ce.valid;
  r.flagged = ce.flagged;
  r.ce = ce.loss;
  const double inv = r.valid > 0 ? 1.0 / static_cast<double>(r.valid) : 0.0;
  const double m = static_cast<double>(teachers.size());
  if (with_grad)
    for (const auto& s : student) r.grad.emplace_back(s.channels, s.height, s.width);
  for (std::size_t b = 0; b < student.size() && with_grad; ++b) ce_sum(student[b], labels[b], opt.alpha * inv, &r.grad[b]);

  const double kl_grad_scale = (1.0 - opt.alpha) * inv * opt.kl_factor() / m;
  r.teacher_kl.assign(teachers.size(), 0.0);
  double kl_total = 0.0;
  for (std::size_t i : canonical_teacher_order(teachers)) {
    double sum = 0.0;
    for (std::size_t b = 0; b < student.size(); ++b)
      sum += kl_sum(student[b], teachers[i][b], labels[b], opt.temperature, kl_grad_scale, with_grad ? &r.grad[b] : nullptr);
    r.teacher_kl[i] = sum * inv;
    kl_total += r.teacher_kl[i];
  }
  r.kl = kl_total / m;
  r.loss = opt.alpha == 1.0 ? r.ce : opt.alpha * r.ce + (1.0 - opt.alpha) * opt.kl_factor() * r.kl;
  return r;
}

}  // namespace icefm
