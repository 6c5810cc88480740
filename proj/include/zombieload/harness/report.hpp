#pragma once

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zombieload/harness/config.hpp"

namespace zl::harness {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kReportFormat = 1;

/// What one experiment produced: metrics for the report, extra files (name,
/// content) and, if it did not reach its goal, a reason.
struct ExperimentOutput {
  json metrics = json::object();
  std::vector<std::pair<std::string, std::string>> files;
  std::optional<std::string> failure;
};

inline json make_report(const std::string& experiment, const ScenarioConfig& cfg, const ExperimentOutput& out) {
  json r;
  r["experiment"] = experiment;
  r["seed"] = cfg.seed;
  r["scenario_digest"] = scenario_digest(cfg);
  r["versions"] = {{"zombieload", kVersion}, {"report_format", kReportFormat}};
  r["metrics"] = out.metrics;
  if (out.failure) r["failure"] = *out.failure;
  return r;
}

namespace detail {

inline void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

inline std::string report_text(const json& report, const std::string& format) {
  if (format == "json") return report.dump(2) + "\n";
  std::vector<std::pair<std::string, std::string>> rows;
  detail::flatten(report, "", rows);
  std::string s = "key,value\n";
  for (const auto& [k, v] : rows) s += detail::csv_field(k) + "," + detail::csv_field(v) + "\n";
  return s;
}

}  // namespace zl::harness
