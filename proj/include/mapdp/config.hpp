#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/optimizer.hpp"
#include "mapdp/pruning.hpp"

namespace mapdp {

enum class Precision { F32, F64 };

/// Everything a single training run needs. Defaults mirror a 40-epoch desk
/// recipe: LR x0.1 at 50%/75% of epochs, pruning ramp over the middle
/// quarter starting at 50%, structure frozen at 83%.
struct RunConfig {
  // data
  std::string dataset = "synthetic";  // synthetic | idx
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  size_t train_limit = 0;  // 0 = use all
  size_t synthetic_classes = 10;
  size_t synthetic_per_class = 1000;
  size_t synthetic_test_per_class = 200;
  size_t synthetic_dim = 784;
  double synthetic_sigma = 0.3;
  uint64_t data_seed = 7;

  // model / run
  std::vector<size_t> arch = {784, 256, 10};
  uint64_t seed = 1;
  int epochs = 40;
  size_t batch_size = 128;
  Precision precision = Precision::F32;

  // optimizer
  double lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool nesterov = false;
  bool decay_all = false;
  std::string lr_milestones = "default";  // default | none | "e:m,e:m"

  // pruning
  Variant variant = Variant::D;
  double p_start = 0.0;
  double p_target = 0.9;
  int ramp_start_epoch = -1;  // -1 = 50% of epochs
  int ramp_epochs = -1;       // -1 = 25% of epochs
  double strength = 1.0;      // z
  long update_every = 16;     // F
  int exploit_epoch = -1;     // -1 = 83% of epochs; == epochs disables freezing
  NormScope norm_scope = NormScope::Global;
  NormKind norm_kind = NormKind::MagnitudeMinMax;

  // run control
  int stop_after_epoch = 0;   // 0 = run to completion
  int checkpoint_every = 0;   // epochs; 0 = final only
  std::string resume_from;    // checkpoint path

  int resolved_ramp_start() const {
    return ramp_start_epoch >= 0 ? ramp_start_epoch : epochs / 2;
  }
  int resolved_ramp_epochs() const {
    return ramp_epochs >= 0 ? ramp_epochs : std::max(1, epochs / 4);
  }
  int resolved_exploit_epoch() const {
    return exploit_epoch >= 0 ? exploit_epoch : (epochs * 83 + 50) / 100;
  }

  std::vector<std::pair<int, double>> resolved_milestones() const {
    std::vector<std::pair<int, double>> ms;
    if (lr_milestones == "none") return ms;
    if (lr_milestones == "default") {
      ms.emplace_back(epochs / 2, 0.1);
      ms.emplace_back(epochs * 3 / 4, 0.1);
      return ms;
    }
    std::stringstream ss(lr_milestones);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos)
        throw ConfigError("lr_milestones entries must look like epoch:multiplier");
      ms.emplace_back(std::stoi(item.substr(0, colon)),
                      std::stod(item.substr(colon + 1)));
    }
    return ms;
  }

  SgdConfig sgd_config() const {
    SgdConfig s;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.nesterov = nesterov;
    s.decay_all = decay_all;
    s.lr_milestones = resolved_milestones();
    return s;
  }

  GradualSchedule schedule() const {
    return {p_start, p_target, resolved_ramp_start(), resolved_ramp_epochs()};
  }

  void validate() const {
    if (dataset != "synthetic" && dataset != "idx")
      throw ConfigError("dataset must be synthetic or idx");
    if (dataset == "idx" &&
        (idx_train_images.empty() || idx_train_labels.empty() ||
         idx_test_images.empty() || idx_test_labels.empty()))
      throw ConfigError("idx dataset requires all four idx_* paths");
    if (arch.size() < 3) throw ConfigError("arch needs at least three dims");
    for (size_t d : arch)
      if (d == 0) throw ConfigError("arch dims must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (p_start < 0.0 || p_start >= 1.0 || p_target < 0.0 || p_target >= 1.0)
      throw ConfigError("pruning ratios must lie in [0, 1)");
    if (p_start > p_target)
      throw ConfigError("p_start must not exceed p_target");
    if (strength < 0.0) throw ConfigError("z must be >= 0");
    if (update_every < 1) throw ConfigError("mask update frequency must be >= 1");
    if (resolved_exploit_epoch() > epochs)
      throw ConfigError("exploit_epoch must not exceed epochs");
    if (resolved_ramp_start() + resolved_ramp_epochs() > epochs)
      throw ConfigError("pruning ramp must finish within the run");
    if (stop_after_epoch < 0 || stop_after_epoch > epochs)
      throw ConfigError("stop_after_epoch out of range");
    resolved_milestones();  // syntax check
    sgd_config();           // range checks via Sgd at run time
  }
};

namespace cfg {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("boolean expected for " + key + ", got '" + v + "'");
}

inline std::vector<size_t> parse_arch(const std::string& v) {
  std::vector<size_t> dims;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, '-')) dims.push_back(std::stoul(trim(item)));
  return dims;
}

/// Flat key = value format; '#' starts a comment; unknown keys are errors.
inline RunConfig parse(std::istream& in) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "dataset") c.dataset = val;
      else if (key == "idx_train_images") c.idx_train_images = val;
      else if (key == "idx_train_labels") c.idx_train_labels = val;
      else if (key == "idx_test_images") c.idx_test_images = val;
      else if (key == "idx_test_labels") c.idx_test_labels = val;
      else if (key == "train_limit") c.train_limit = std::stoul(val);
      else if (key == "synthetic_classes") c.synthetic_classes = std::stoul(val);
      else if (key == "synthetic_per_class") c.synthetic_per_class = std::stoul(val);
      else if (key == "synthetic_test_per_class") c.synthetic_test_per_class = std::stoul(val);
      else if (key == "synthetic_dim") c.synthetic_dim = std::stoul(val);
      else if (key == "synthetic_sigma") c.synthetic_sigma = std::stod(val);
      else if (key == "data_seed") c.data_seed = std::stoull(val);
      else if (key == "arch") c.arch = parse_arch(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "batch_size") c.batch_size = std::stoul(val);
      else if (key == "precision") {
        if (val == "f32") c.precision = Precision::F32;
        else if (val == "f64") c.precision = Precision::F64;
        else throw ConfigError("precision must be f32 or f64");
      }
      else if (key == "lr") c.lr = std::stod(val);
      else if (key == "momentum") c.momentum = std::stod(val);
      else if (key == "weight_decay") c.weight_decay = std::stod(val);
      else if (key == "nesterov") c.nesterov = parse_bool(val, key);
      else if (key == "decay_all") c.decay_all = parse_bool(val, key);
      else if (key == "lr_milestones") c.lr_milestones = val;
      else if (key == "variant") c.variant = variant_from(val);
      else if (key == "p_start") c.p_start = std::stod(val);
      else if (key == "p_target") c.p_target = std::stod(val);
      else if (key == "ramp_start_epoch") c.ramp_start_epoch = std::stoi(val);
      else if (key == "ramp_epochs") c.ramp_epochs = std::stoi(val);
      else if (key == "z") c.strength = std::stod(val);
      else if (key == "mask_update_freq") c.update_every = std::stol(val);
      else if (key == "exploit_epoch") c.exploit_epoch = std::stoi(val);
      else if (key == "norm_scope") {
        if (val == "global") c.norm_scope = NormScope::Global;
        else if (val == "per_layer") c.norm_scope = NormScope::PerLayer;
        else throw ConfigError("norm_scope must be global or per_layer");
      }
      else if (key == "norm_kind") {
        if (val == "magnitude_minmax") c.norm_kind = NormKind::MagnitudeMinMax;
        else if (val == "rank_linear") c.norm_kind = NormKind::RankLinear;
        else throw ConfigError("norm_kind must be magnitude_minmax or rank_linear");
      }
      else if (key == "stop_after_epoch") c.stop_after_epoch = std::stoi(val);
      else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(val);
      else if (key == "resume_from") c.resume_from = val;
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad value for " + key);
    } catch (const std::out_of_range&) {
      throw ConfigError("line " + std::to_string(lineno) + ": value out of range for " + key);
    }
  }
  return c;
}

inline RunConfig parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  return parse(in);
}

}  // namespace cfg

}  // namespace mapdp
