// Command-line harness for sparse MLP training with magnitude-attention
// dynamic pruning: single runs, axis sweeps, run analysis, and synthetic
// IDX dataset generation.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mapdp/analyze.hpp"
#include "mapdp/config.hpp"
#include "mapdp/data.hpp"
#include "mapdp/sweep.hpp"
#include "mapdp/trainer.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(mapdp::cfg::trim(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse MLP training with magnitude-attention dynamic pruning"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/run", resume_path;
  auto* train_cmd = app.add_subcommand("train", "Run one training");
  train_cmd->add_option("--config", config_path, "Run config file")->required();
  train_cmd->add_option("--out", out_dir, "Output directory");
  train_cmd->add_option("--resume", resume_path, "Resume from a checkpoint");

  std::string axis, values_csv, sweep_out = "runs/sweep";
  int seeds = 3;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a single-axis sweep");
  sweep_cmd->add_option("--config", config_path, "Base run config file")->required();
  sweep_cmd->add_option("--axis", axis, "Sweep axis: variant, z, or exploit")->required();
  sweep_cmd->add_option("--values", values_csv, "Comma-separated axis values")->required();
  sweep_cmd->add_option("--seeds", seeds, "Seeds per value");
  sweep_cmd->add_option("--out", sweep_out, "Output directory");

  std::vector<std::string> run_dirs;
  std::string analyze_out = "runs/analysis";
  auto* analyze_cmd = app.add_subcommand("analyze", "Summarize finished runs");
  analyze_cmd->add_option("dirs", run_dirs, "Run directories")->required();
  analyze_cmd->add_option("--out", analyze_out, "Report directory");

  size_t classes = 10, per_class = 100, dim = 784;
  uint32_t rows = 0, cols = 0;
  uint64_t gen_seed = 7;
  double sigma = 0.3;
  std::string images_path, labels_path;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic IDX files");
  gen_cmd->add_option("--classes", classes, "Number of classes");
  gen_cmd->add_option("--per-class", per_class, "Samples per class");
  gen_cmd->add_option("--dim", dim, "Feature dimension");
  gen_cmd->add_option("--rows", rows, "Image rows (default: square-ish)");
  gen_cmd->add_option("--cols", cols, "Image cols");
  gen_cmd->add_option("--seed", gen_seed, "Generator seed");
  gen_cmd->add_option("--sigma", sigma, "Blob standard deviation");
  gen_cmd->add_option("--images", images_path, "Output image IDX path")->required();
  gen_cmd->add_option("--labels", labels_path, "Output label IDX path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      mapdp::RunConfig cfg = mapdp::cfg::parse_file(config_path);
      if (!resume_path.empty()) cfg.resume_from = resume_path;
      try {
        cfg.validate();
      } catch (const mapdp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
      }
      auto rec = mapdp::train(cfg, out_dir);
      std::printf("last_acc=%.4f best_acc=%.4f (epoch %d) sparsity=%.4f out=%s\n",
                  rec.last_acc, rec.best_acc, rec.best_epoch,
                  rec.final_sparsity, out_dir.c_str());
    } else if (*sweep_cmd) {
      mapdp::RunConfig cfg = mapdp::cfg::parse_file(config_path);
      const auto values = split_csv(values_csv);
      try {
        cfg.validate();
        if (values.empty())
          throw mapdp::ConfigError("sweep requires a non-empty value list");
      } catch (const mapdp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
      }
      auto result = mapdp::sweep(cfg, axis, values, seeds, sweep_out);
      for (const auto& a : result.aggregates)
        std::printf("%s=%s last=%.4f±%.4f best=%.4f±%.4f\n", axis.c_str(),
                    a.value.c_str(), a.mean_last, a.std_last, a.mean_best,
                    a.std_best);
    } else if (*analyze_cmd) {
      auto report = mapdp::analyze(run_dirs, analyze_out);
      std::printf("%s\n", report.dump(2).c_str());
    } else if (*gen_cmd) {
      if (rows == 0 || cols == 0) {
        rows = 1;
        cols = static_cast<uint32_t>(dim);
      }
      if (classes > 256) {
        std::fprintf(stderr, "config error: IDX labels are bytes; classes must be <= 256\n");
        return 2;
      }
      auto ds = mapdp::gen_synthetic<float>(classes, per_class, dim, gen_seed, sigma);
      auto [img, lab] = mapdp::to_idx(ds, rows, cols);
      mapdp::idx::write(images_path, img);
      mapdp::idx::write(labels_path, lab);
      std::printf("wrote %zu samples to %s / %s\n", ds.size(),
                  images_path.c_str(), labels_path.c_str());
    }
  } catch (const mapdp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
