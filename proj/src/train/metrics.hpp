// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <json.hpp>
#include <vector>

namespace netmamba::train {

struct MetricsReport {
  double accuracy = 0;
  double precision = 0;  // support-weighted
  double recall = 0;     // support-weighted
  double f1 = 0;         // support-weighted
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> class_precision, class_recall, class_f1;
  std::vector<std::size_t> support;
  std::size_t total = 0;
};

/// Accuracy plus support-weighted precision/recall/F1, with 0/0 taken as 0.
MetricsReport compute_metrics(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predictions,
                              std::size_t num_classes);

nlohmann::json to_json(const MetricsReport& m);

}  // namespace netmamba::train
