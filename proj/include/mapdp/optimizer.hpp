#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/model.hpp"

namespace mapdp {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  bool nesterov = false;
  bool decay_all = false;  // when false, decay skips pruned weights
  std::vector<std::pair<int, double>> lr_milestones;  // (epoch, multiplier)
};

/// SGD with momentum, weight decay, and a step LR schedule. Gradients of
/// prunable parameters arrive pre-scaled per the active update rule.
template <typename T>
class Sgd {
 public:
  Sgd(const ParamRegistry<T>& reg, SgdConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0)
      throw ConfigError("momentum must lie in [0, 1)");
    if (cfg_.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
    for (const auto& p : reg.params())
      velocity_.emplace_back(p.value->size(), T(0));
    current_lr_ = cfg_.lr;
  }

  const SgdConfig& config() const { return cfg_; }
  double current_lr() const { return current_lr_; }
  std::vector<std::vector<T>>& velocity() { return velocity_; }

  /// Base LR times the product of multipliers whose milestone <= epoch.
  double lr_at(int epoch) const {
    double lr = cfg_.lr;
    for (const auto& [at, mult] : cfg_.lr_milestones)
      if (at <= epoch) lr *= mult;
    if (lr <= 0.0) throw ConfigError("milestones drove the learning rate to zero");
    return lr;
  }

  void set_epoch(int epoch) { current_lr_ = lr_at(epoch); }

  /// One update over the whole registry.
  ///   grads: per-parameter d(loss)/d(effective weights), registry order.
  ///   scale: per-prunable-parameter gradient scaling (empty slot = ones).
  ///   mask:  per-prunable-parameter keep mask, used to restrict decay.
  void step(ParamRegistry<T>& reg,
            const std::vector<const std::vector<T>*>& grads,
            const std::vector<const std::vector<T>*>& scale,
            const std::vector<const std::vector<uint8_t>*>& mask) {
    const T lr = static_cast<T>(current_lr_);
    const T mu = static_cast<T>(cfg_.momentum);
    const T wd = static_cast<T>(cfg_.weight_decay);
    size_t pi = 0;  // index over prunable params
    for (size_t p = 0; p < reg.params().size(); ++p) {
      auto& param = reg.params()[p];
      auto& w = param.value->data;
      const std::vector<T>& g = *grads[p];
      if (g.size() != w.size())
        throw ShapeError("gradient size mismatch for " + param.name);
      auto& v = velocity_[p];
      if (param.prunable) {
        const std::vector<T>* s = pi < scale.size() ? scale[pi] : nullptr;
        const std::vector<uint8_t>* m = pi < mask.size() ? mask[pi] : nullptr;
        ++pi;
        // std::fma keeps the arithmetic identical whether or not scale and
        // mask are present, so a no-op engine matches the dense path bit
        // for bit (loop unswitching would otherwise contract differently).
        for (size_t i = 0; i < w.size(); ++i) {
          T gi = g[i];
          if (wd != T(0)) {
            const T decayed =
                cfg_.decay_all ? w[i]
                               : (m ? static_cast<T>((*m)[i]) * w[i] : w[i]);
            gi = std::fma(wd, decayed, gi);
          }
          if (s) gi *= (*s)[i];
          v[i] = std::fma(mu, v[i], gi);
          const T upd = cfg_.nesterov ? std::fma(mu, v[i], gi) : v[i];
          w[i] = std::fma(-lr, upd, w[i]);
        }
      } else {
        for (size_t i = 0; i < w.size(); ++i) {
          T gi = g[i];
          if (wd != T(0)) gi = std::fma(wd, w[i], gi);
          v[i] = std::fma(mu, v[i], gi);
          const T upd = cfg_.nesterov ? std::fma(mu, v[i], gi) : v[i];
          w[i] = std::fma(-lr, upd, w[i]);
        }
      }
    }
  }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<T>> velocity_;
  double current_lr_ = 0.0;
};

}  // namespace mapdp
