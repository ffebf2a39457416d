// SPDX-License-Identifier: Apache-2.0
#include "icefm/metrics.hpp"

#include <cstdio>

#include "icefm/io.hpp"

namespace icefm {

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string metrics_csv_row(const std::string& model, const std::string& strategy, int channels, const MetricsReport& r) {
  return csv_line({model, strategy, std::to_string(channels), format_metric(r.weighted_f1), format_metric(r.accuracy),
                   format_metric(r.weighted_precision), format_metric(r.weighted_recall), format_metric(r.weighted_iou)});
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["f1"] = r.weighted_f1;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.weighted_precision;
  j["recall"] = r.weighted_recall;
  j["iou"] = r.weighted_iou;
  j["total_pixels"] = r.total_pixels;
  j["per_class"] = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    j["per_class"].push_back({{"class", c}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"iou", m.iou},
                              {"support", m.support}, {"weight", m.weight}});
  }
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.weighted_f1 = j.at("f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.weighted_precision = j.at("precision").get<double>();
  r.weighted_recall = j.at("recall").get<double>();
  r.weighted_iou = j.at("iou").get<double>();
  r.total_pixels = j.at("total_pixels").get<std::int64_t>();
  for (const auto& c : j.at("per_class"))
    r.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(), c.at("iou").get<double>(),
                           c.at("support").get<std::int64_t>(), c.at("weight").get<double>()});
  return r;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"class_count", cm.class_count()}, {"counts", cm.counts()}};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  ConfusionMatrix cm(j.at("class_count").get<int>());
  const auto counts = j.at("counts").get<std::vector<std::int64_t>>();
  if (counts.size() != static_cast<std::size_t>(cm.class_count()) * cm.class_count()) throw ValidationError("confusion matrix: wrong count length");
  for (int g = 0; g < cm.class_count(); ++g)
    for (int p = 0; p < cm.class_count(); ++p) {
      const auto v = counts[static_cast<std::size_t>(g) * cm.class_count() + p];
      if (v < 0) throw ValidationError("confusion matrix: negative count");
      cm.add(g, p, v);
    }
  return cm;
}

}  // namespace icefm
