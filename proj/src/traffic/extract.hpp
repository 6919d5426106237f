// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "traffic/dataset.hpp"
#include "traffic/repr.hpp"

namespace netmamba::traffic {

struct ExtractOptions {
  std::filesystem::path input;   // <input>/<class_name>/*.pcap
  std::filesystem::path output;  // created if missing
  ReprConfig repr;
  std::size_t min_packets = 1;   // flows with fewer IP packets are dropped
  std::size_t limit_lower = 0;
  std::size_t limit_upper = std::numeric_limits<std::size_t>::max();
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

struct ClassSummary {
  std::string name;
  std::size_t files = 0;
  std::size_t flows_seen = 0;
  std::size_t flows_short = 0;     // below min_packets
  std::size_t flows_balanced_out = 0;
  std::size_t flows_kept = 0;
  bool dropped = false;            // below limit_lower
};

struct ExtractSummary {
  std::vector<ClassSummary> classes;
  std::vector<std::string> class_names;  // kept classes, label order
  std::vector<std::string> file_errors;
  std::vector<std::string> warnings;
  std::size_t packets = 0, non_ip = 0, dhcp = 0, malformed = 0;
  std::size_t train = 0, val = 0, test = 0;
};

/// Runs the whole directory pipeline and writes train/val/test.nmstride,
/// manifest.json and summary.json. Unreadable captures are recorded and
/// skipped. Throws DataError when no usable flow remains.
ExtractSummary extract_directory(const ExtractOptions& opts);

std::string summary_json(const ExtractSummary& s);

}  // namespace netmamba::traffic
