// SPDX-License-Identifier: Apache-2.0
//
// Pixel confusion matrices and support-weighted segmentation scores.
//
// counts(g, p) holds the number of pixels with ground truth g predicted as p.
// Pixels whose ground truth is kIgnoreLabel are never counted. For class c:
//   TP_c = counts(c, c),  FN_c = row sum - TP_c,  FP_c = column sum - TP_c,
//   n_c  = TP_c + FN_c,   w_c  = n_c / sum_j n_j.
// Aggregates are w-weighted sums of the per-class values; the weighted recall
// therefore equals trace / total (overall accuracy) up to rounding.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/errors.hpp"
#include "icefm/tensor.hpp"

namespace icefm {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int class_count) : classes_(class_count), counts_(static_cast<std::size_t>(class_count) * class_count, 0) {
    if (class_count < 1 || class_count > 254) throw ValidationError("class_count must be in [1, 254]");
  }

  [[nodiscard]] int class_count() const { return classes_; }
  [[nodiscard]] std::int64_t operator()(int truth, int pred) const { return counts_[index(truth, pred)]; }
  [[nodiscard]] const std::vector<std::int64_t>& counts() const { return counts_; }

  /// Adds one pixel; does not check ranges.
  void add(int truth, int pred, std::int64_t n = 1) { counts_[index(truth, pred)] += n; }

  /// In-place accumulation of a raster pair. Throws on shape mismatch, a
  /// prediction outside {0..K-1}, or a truth label outside {0..K-1, 255};
  /// on error the matrix is left unchanged.
  void accumulate(const LabelRaster& truth, const LabelRaster& pred) {
    if (truth.height != pred.height || truth.width != pred.width)
      throw ValidationError("accumulate: truth and pred shapes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred.data[i] >= classes_)
        throw ValidationError("accumulate: prediction value " + std::to_string(pred.data[i]) + " out of range");
      const auto t = truth.data[i];
      if (t != kIgnoreLabel && t >= classes_)
        throw ValidationError("accumulate: truth value " + std::to_string(t) + " out of range");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth.data[i] == kIgnoreLabel) continue;
      ++counts_[index(truth.data[i], pred.data[i])];
    }
  }

  /// In-place entrywise sum.
  void merge_from(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ValidationError("merge: class_count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  [[nodiscard]] std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }
  [[nodiscard]] std::int64_t true_positives(int c) const { return (*this)(c, c); }
  [[nodiscard]] std::int64_t support(int c) const {
    std::int64_t s = 0;
    for (int p = 0; p < classes_; ++p) s += (*this)(c, p);
    return s;
  }
  [[nodiscard]] std::int64_t predicted(int c) const {
    std::int64_t s = 0;
    for (int g = 0; g < classes_; ++g) s += (*this)(g, c);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  [[nodiscard]] std::size_t index(int truth, int pred) const { return static_cast<std::size_t>(truth) * classes_ + pred; }

  int classes_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Returns cm plus the counts of (truth, pred); cm itself is not modified.
inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelRaster& truth, const LabelRaster& pred) {
  cm.accumulate(truth, pred);
  return cm;
}

inline ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  out.merge_from(b);
  return out;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
  std::int64_t support = 0;
  double weight = 0.0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double weighted_iou = 0.0;
  std::int64_t total_pixels = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace detail {
inline double safe_ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Per-class and support-weighted scores. A metric whose denominator is zero
/// is reported as 0; classes without ground-truth pixels get weight 0.
inline MetricsReport report(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw ValidationError("report: confusion matrix is empty (no pixels evaluated)");

  MetricsReport r;
  r.total_pixels = total;
  r.per_class.resize(cm.class_count());
  std::int64_t trace = 0;
  for (int c = 0; c < cm.class_count(); ++c) {
    const std::int64_t tp = cm.true_positives(c);
    const std::int64_t n = cm.support(c);
    const std::int64_t fp = cm.predicted(c) - tp;
    const std::int64_t fn = n - tp;
    auto& m = r.per_class[c];
    m.support = n;
    m.weight = detail::safe_ratio(n, total);
    m.precision = detail::safe_ratio(tp, tp + fp);
    m.recall = detail::safe_ratio(tp, n);
    m.f1 = detail::safe_ratio(2 * tp, 2 * tp + fp + fn);
    m.iou = detail::safe_ratio(tp, tp + fp + fn);
    trace += tp;
  }
  r.accuracy = detail::safe_ratio(trace, total);
  for (const auto& m : r.per_class) {
    r.weighted_precision += m.weight * m.precision;
    r.weighted_recall += m.weight * m.recall;
    r.weighted_f1 += m.weight * m.f1;
    r.weighted_iou += m.weight * m.iou;
  }
  return r;
}

/// Header matching the column order of the benchmark tables.
inline std::string metrics_csv_header() { return "model,strategy,channels,f1,acc,prec,rec,iou"; }

std::string metrics_csv_row(const std::string& model, const std::string& strategy, int channels, const MetricsReport& r);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConfusionMatrix& cm);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);

/// Fixed-precision decimal used in every CSV the tool writes.
std::string format_metric(double v);

}  // namespace icefm
