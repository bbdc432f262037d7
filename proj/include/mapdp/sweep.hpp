#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/config.hpp"
#include "mapdp/trainer.hpp"

namespace mapdp {

struct SweepResult {
  struct Row {
    std::string value;
    uint64_t seed;
    RunRecord record;
  };
  struct Aggregate {
    std::string value;
    double mean_last, std_last, mean_best, std_best;
  };
  std::vector<Row> rows;
  std::vector<Aggregate> aggregates;
};

namespace sweep_detail {

inline void apply_axis(RunConfig& c, const std::string& axis,
                       const std::string& value) {
  if (axis == "variant") {
    c.variant = variant_from(value);
  } else if (axis == "z") {
    c.strength = std::stod(value);
  } else if (axis == "exploit") {
    if (value == "on") c.exploit_epoch = -1;               // desk default
    else if (value == "off") c.exploit_epoch = c.epochs;   // never freeze
    else c.exploit_epoch = std::stoi(value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis +
                      "' (expected variant, z, or exploit)");
  }
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace sweep_detail

/// Runs a (values x seeds) grid off a base config; one output directory per
/// run plus an aggregate CSV with mean and std over seeds per value.
inline SweepResult sweep(const RunConfig& base, const std::string& axis,
                         const std::vector<std::string>& values, int seeds,
                         const std::string& out_dir) {
  if (values.empty()) throw ConfigError("sweep requires a non-empty value list");
  if (seeds < 1) throw ConfigError("sweep requires at least one seed");
  std::filesystem::create_directories(out_dir);
  SweepResult result;
  for (const auto& value : values) {
    std::vector<double> lasts, bests;
    for (int s = 0; s < seeds; ++s) {
      RunConfig c = base;
      sweep_detail::apply_axis(c, axis, value);
      c.seed = base.seed + static_cast<uint64_t>(s);
      const std::string dir =
          out_dir + "/" + axis + "_" + value + "/seed" + std::to_string(c.seed);
      RunRecord rec = train(c, dir);
      lasts.push_back(rec.last_acc);
      bests.push_back(rec.best_acc);
      result.rows.push_back({value, c.seed, std::move(rec)});
    }
    auto [ml, sl] = sweep_detail::mean_std(lasts);
    auto [mb, sb] = sweep_detail::mean_std(bests);
    result.aggregates.push_back({value, ml, sl, mb, sb});
  }

  std::string csv = "axis,value,seed,last_acc,best_acc\n";
  for (const auto& r : result.rows)
    csv += axis + "," + r.value + "," + std::to_string(r.seed) + "," +
           fmt_num(r.record.last_acc) + "," + fmt_num(r.record.best_acc) + "\n";
  csv += "axis,value,mean_last,std_last,mean_best,std_best\n";
  for (const auto& a : result.aggregates)
    csv += axis + "," + a.value + "," + fmt_num(a.mean_last) + "," +
           fmt_num(a.std_last) + "," + fmt_num(a.mean_best) + "," +
           fmt_num(a.std_best) + "\n";
  wire::write_file_atomic(out_dir + "/sweep.csv", csv);
  return result;
}

}  // namespace mapdp
