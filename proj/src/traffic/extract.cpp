// SPDX-License-Identifier: Apache-2.0
#include "traffic/extract.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "errors.hpp"

namespace netmamba::traffic {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".pcap"))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExtractSummary extract_directory(const ExtractOptions& opts) {
  opts.repr.validate();
  if (!fs::is_directory(opts.input)) throw DataError("input directory " + opts.input.string() + " does not exist");
  ExtractSummary summary;

  std::vector<std::vector<StrideSample>> per_class;
  for (const auto& class_dir : sorted_entries(opts.input, true)) {
    ClassSummary cs;
    cs.name = class_dir.filename().string();
    std::vector<StrideSample> samples;
    for (const auto& file : sorted_entries(class_dir, false)) {
      ++cs.files;
      std::vector<RawPacket> packets;
      try {
        packets = parse_capture(file);
      } catch (const std::exception& e) {
        summary.file_errors.push_back(file.string() + ": " + e.what());
        continue;
      }
      summary.packets += packets.size();
      FlowAssembly fa = assemble_flows(packets, opts.repr);
      summary.non_ip += fa.non_ip;
      summary.dhcp += fa.dhcp;
      summary.malformed += fa.malformed;
      for (auto& flow : fa.flows) {
        ++cs.flows_seen;
        if (flow.packets.size() < opts.min_packets) {
          ++cs.flows_short;
          continue;
        }
        samples.push_back(build_sample(flow, opts.repr));
      }
    }
    summary.classes.push_back(cs);
    per_class.push_back(std::move(samples));
  }

  std::vector<std::size_t> before(per_class.size());
  for (std::size_t c = 0; c < per_class.size(); ++c) before[c] = per_class[c].size();
  auto balanced = balance_dataset(std::move(per_class), opts.limit_lower, opts.limit_upper, opts.seed);
  for (auto& cs : summary.classes) cs.dropped = true;
  for (const auto& bc : balanced) {
    auto& cs = summary.classes[bc.source_class];
    cs.dropped = false;
    cs.flows_kept = bc.samples.size();
    cs.flows_balanced_out = before[bc.source_class] - bc.samples.size();
  }

  SampleSet all;
  all.packets_per_flow = static_cast<std::uint32_t>(opts.repr.packets_per_flow);
  all.header_bytes = static_cast<std::uint32_t>(opts.repr.header_bytes);
  all.payload_bytes = static_cast<std::uint32_t>(opts.repr.payload_bytes);
  all.stride_len = static_cast<std::uint32_t>(opts.repr.stride_len);
  std::uint32_t label = 0;
  for (const auto& bc : balanced) {
    if (bc.samples.empty()) continue;
    summary.class_names.push_back(summary.classes[bc.source_class].name);
    for (const auto& s : bc.samples) all.append(s.bytes.data(), label);
    ++label;
  }
  all.num_classes = label;
  if (all.size() == 0) throw DataError("no usable flows under " + opts.input.string());

  SplitIndices split = split_indices(all.labels, opts.ratios, opts.seed);
  summary.warnings = split.warnings;
  summary.train = split.train.size();
  summary.val = split.val.size();
  summary.test = split.test.size();

  fs::create_directories(opts.output);
  write_sample_set(opts.output / "train.nmstride", all.select(split.train));
  write_sample_set(opts.output / "val.nmstride", all.select(split.val));
  write_sample_set(opts.output / "test.nmstride", all.select(split.test));

  nlohmann::json manifest;
  manifest["classes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < summary.class_names.size(); ++i)
    manifest["classes"].push_back({{"index", i}, {"name", summary.class_names[i]}});
  manifest["packets_per_flow"] = opts.repr.packets_per_flow;
  manifest["header_bytes"] = opts.repr.header_bytes;
  manifest["payload_bytes"] = opts.repr.payload_bytes;
  manifest["stride_len"] = opts.repr.stride_len;
  manifest["anonymize_ips"] = opts.repr.anonymize_ips;
  manifest["include_header"] = opts.repr.include_header;
  manifest["include_payload"] = opts.repr.include_payload;
  manifest["seed"] = opts.seed;
  write_text(opts.output / "manifest.json", manifest.dump(2) + "\n");
  write_text(opts.output / "summary.json", summary_json(summary));
  return summary;
}

std::string summary_json(const ExtractSummary& s) {
  nlohmann::json j;
  j["packets"] = s.packets;
  j["non_ip_packets"] = s.non_ip;
  j["dhcp_packets"] = s.dhcp;
  j["malformed_packets"] = s.malformed;
  j["samples"] = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
  j["classes"] = nlohmann::json::array();
  for (const auto& c : s.classes)
    j["classes"].push_back({{"name", c.name},
                            {"files", c.files},
                            {"flows_seen", c.flows_seen},
                            {"flows_dropped_short", c.flows_short},
                            {"flows_dropped_limit", c.flows_balanced_out},
                            {"flows_kept", c.flows_kept},
                            {"class_dropped", c.dropped}});
  j["file_errors"] = s.file_errors;
  j["warnings"] = s.warnings;
  return j.dump(2) + "\n";
}

}  // namespace netmamba::traffic
