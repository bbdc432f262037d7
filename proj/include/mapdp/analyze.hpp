#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapdp/checkpoint.hpp"
#include "mapdp/common.hpp"

namespace mapdp {

struct RunAnalysis {
  std::string dir;
  std::string variant;
  double z = 1.0;
  int epochs = 0;
  int exploit_epoch = 0;
  bool exploited = false;
  double last_acc = 0.0;
  double best_acc = 0.0;
  double delta_last_best = 0.0;
  long exploit_iteration = 0;
  long total_iterations = 0;
  double late_mask_change_mean = 0.0;  // mean over final third of exploration
  std::vector<std::pair<long, double>> mask_change_series;
};

namespace analyze_detail {

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace analyze_detail

/// Reads one run directory (metrics.csv + summary.json) back into metrics
/// needed for the trend reports.
inline RunAnalysis analyze_run(const std::string& dir) {
  RunAnalysis a;
  a.dir = dir;
  {
    std::ifstream in(dir + "/summary.json");
    if (!in) throw IoError("cannot open " + dir + "/summary.json");
    nlohmann::json j = nlohmann::json::parse(in);
    a.variant = j.at("variant").get<std::string>();
    a.z = j.at("z").get<double>();
    a.epochs = j.at("epochs").get<int>();
    a.exploit_epoch = j.at("exploit_epoch").get<int>();
    a.last_acc = j.at("last_acc").get<double>();
    a.best_acc = j.at("best_acc").get<double>();
    a.exploit_iteration = j.at("exploit_iteration").get<long>();
    a.total_iterations = j.at("total_iterations").get<long>();
  }
  a.exploited = a.exploit_epoch < a.epochs;
  a.delta_last_best = a.last_acc - a.best_acc;

  const auto rows = analyze_detail::read_csv(dir + "/metrics.csv");
  if (rows.empty() || rows[0].size() < 9 || rows[0][0] != "epoch")
    throw IoError("malformed metrics.csv in " + dir);
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 9) throw IoError("short row in " + dir + "/metrics.csv");
    if (row[2] != "mask_update") continue;
    a.mask_change_series.emplace_back(std::stol(row[1]), std::stod(row[7]));
  }

  // Mean mask change over the final third of the exploration window.
  const long window_end = a.exploit_iteration;
  const long window_start = window_end - window_end / 3;
  double sum = 0.0;
  size_t count = 0;
  for (const auto& [it, chg] : a.mask_change_series) {
    if (it > window_start && it <= window_end) {
      sum += chg;
      ++count;
    }
  }
  a.late_mask_change_mean = count ? sum / static_cast<double>(count) : 0.0;
  return a;
}

/// Cross-run report: per-run metrics, plot-ready mask change series, and
/// exploit vs no-exploit accuracy deltas grouped by (variant, z).
inline nlohmann::json analyze(const std::vector<std::string>& dirs,
                              const std::string& out_dir = "") {
  std::vector<RunAnalysis> runs;
  for (const auto& d : dirs) runs.push_back(analyze_run(d));

  nlohmann::json report;
  for (const auto& a : runs) {
    report["runs"].push_back({{"dir", a.dir},
                              {"variant", a.variant},
                              {"z", a.z},
                              {"exploited", a.exploited},
                              {"last_acc", a.last_acc},
                              {"best_acc", a.best_acc},
                              {"delta_last_best", a.delta_last_best},
                              {"late_mask_change_mean", a.late_mask_change_mean}});
  }

  // Pair exploit on/off runs sharing a variant and attention strength.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& a : runs) {
    const std::string key = a.variant + "/z=" + fmt_num(a.z);
    if (a.exploited) groups[key].first.push_back(a.last_acc);
    else groups[key].second.push_back(a.last_acc);
  }
  for (const auto& [key, pair] : groups) {
    const auto& [with_ex, without_ex] = pair;
    if (with_ex.empty() || without_ex.empty()) continue;
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    report["exploit_deltas"][key] = {
        {"mean_last_with", mean(with_ex)},
        {"mean_last_without", mean(without_ex)},
        {"delta_last", mean(with_ex) - mean(without_ex)}};
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string csv = "run,iteration,mask_change_ratio\n";
    for (const auto& a : runs)
      for (const auto& [it, chg] : a.mask_change_series)
        csv += a.dir + "," + std::to_string(it) + "," + fmt_num(chg) + "\n";
    wire::write_file_atomic(out_dir + "/mask_change_series.csv", csv);
    wire::write_file_atomic(out_dir + "/report.json", report.dump(2) + "\n");
  }
  return report;
}

}  // namespace mapdp
