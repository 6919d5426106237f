// SPDX-License-Identifier: Apache-2.0
#include "train/metrics.hpp"

#include "errors.hpp"

namespace netmamba::train {

namespace {

double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

}  // namespace

MetricsReport compute_metrics(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predictions,
                              std::size_t num_classes) {
  if (labels.size() != predictions.size()) throw DataError("label and prediction counts differ");
  MetricsReport r;
  r.total = labels.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes)
      throw DataError("class index out of range at sample " + std::to_string(i));
    ++r.confusion[labels[i]][predictions[i]];
  }
  r.support.assign(num_classes, 0);
  std::vector<std::size_t> predicted(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < num_classes; ++t) {
    correct += r.confusion[t][t];
    for (std::size_t p = 0; p < num_classes; ++p) {
      r.support[t] += r.confusion[t][p];
      predicted[p] += r.confusion[t][p];
    }
  }
  r.accuracy = ratio(double(correct), double(r.total));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double tp = double(r.confusion[c][c]);
    const double p = ratio(tp, double(predicted[c]));
    const double rc = ratio(tp, double(r.support[c]));
    const double f = ratio(2 * p * rc, p + rc);
    r.class_precision.push_back(p);
    r.class_recall.push_back(rc);
    r.class_f1.push_back(f);
    const double w = ratio(double(r.support[c]), double(r.total));
    r.precision += w * p;
    r.recall += w * rc;
    r.f1 += w * f;
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"total", m.total},
          {"support", m.support},
          {"confusion", m.confusion},
          {"class_precision", m.class_precision},
          {"class_recall", m.class_recall},
          {"class_f1", m.class_f1}};
}

}  // namespace netmamba::train
