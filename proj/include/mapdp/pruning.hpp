#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/model.hpp"

namespace mapdp {

enum class Variant { Dense, A, B, C, DNoFA, D };
enum class NormScope { Global, PerLayer };
enum class NormKind { MagnitudeMinMax, RankLinear };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Dense: return "dense";
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::DNoFA: return "D_noFA";
    case Variant::D: return "D";
  }
  return "?";
}

inline Variant variant_from(const std::string& s) {
  if (s == "dense") return Variant::Dense;
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  if (s == "C") return Variant::C;
  if (s == "D_noFA") return Variant::DNoFA;
  if (s == "D") return Variant::D;
  throw ConfigError("unknown variant: " + s);
}

/// Cubic ramp of the pruning ratio from p_start (at start_epoch) up to
/// p_target (reached start_epoch + ramp_epochs), constant outside the ramp.
struct GradualSchedule {
  double p_start = 0.0;
  double p_target = 0.0;
  int start_epoch = 0;
  int ramp_epochs = 1;

  double ratio_at(int epoch) const {
    if (epoch <= start_epoch) return p_start;
    if (epoch >= start_epoch + ramp_epochs) return p_target;
    const double t = 1.0 - static_cast<double>(epoch - start_epoch) /
                               static_cast<double>(ramp_epochs);
    return p_target + (p_start - p_target) * t * t * t;
  }
};

namespace prune {

inline size_t prune_count(double ratio, size_t n) {
  return static_cast<size_t>(std::floor(ratio * static_cast<double>(n)));
}

/// Indices of the k smallest entries under (magnitude, original index)
/// ordering; ties resolve to the lowest index.
template <typename T>
std::vector<size_t> smallest_k(const std::vector<T>& magnitudes, size_t k) {
  std::vector<size_t> idx(magnitudes.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  auto less = [&](size_t a, size_t b) {
    if (magnitudes[a] != magnitudes[b]) return magnitudes[a] < magnitudes[b];
    return a < b;
  };
  if (k > 0 && k < idx.size())
    std::nth_element(idx.begin(), idx.begin() + k, idx.end(), less);
  idx.resize(std::min(k, idx.size()));
  return idx;
}

/// Threshold separating pruned from kept weights: the k-th smallest
/// magnitude under stable ordering (0 when nothing is pruned).
template <typename T>
double threshold_for(const std::vector<T>& magnitudes, double ratio) {
  if (magnitudes.empty()) throw Error("threshold over empty weight set");
  if (ratio < 0.0 || ratio >= 1.0)
    throw ConfigError("pruning ratio must lie in [0, 1)");
  const size_t k = prune_count(ratio, magnitudes.size());
  if (k == 0) return 0.0;
  auto pruned = smallest_k(magnitudes, k);
  double lambda = 0.0;
  for (size_t i : pruned)
    lambda = std::max(lambda, static_cast<double>(magnitudes[i]));
  return lambda;
}

/// Binary mask with exactly floor(ratio * n) zeros, pruning the smallest
/// magnitudes and breaking ties by lowest original index.
template <typename T>
std::vector<uint8_t> mask_for(const std::vector<T>& weights, double ratio) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw ConfigError("pruning ratio must lie in [0, 1)");
  std::vector<T> mags(weights.size());
  for (size_t i = 0; i < weights.size(); ++i) mags[i] = std::abs(weights[i]);
  std::vector<uint8_t> mask(weights.size(), 1);
  for (size_t i : smallest_k(mags, prune_count(ratio, weights.size())))
    mask[i] = 0;
  return mask;
}

/// Attention floor (1 - ratio)^z given to every pruned weight.
inline double attention_floor(double ratio, double strength) {
  return std::pow(1.0 - ratio, strength);
}

/// Magnitude attention over one normalization scope. Kept weights map into
/// [floor, 1]; min/max (or the rank grid) are taken over all weights of the
/// scope, pruned included.
template <typename T>
std::vector<T> attention_for(const std::vector<T>& weights,
                             const std::vector<uint8_t>& mask, double ratio,
                             double strength, NormKind kind) {
  if (mask.size() != weights.size())
    throw ShapeError("attention mask length mismatch");
  const T floor_v = static_cast<T>(attention_floor(ratio, strength));
  std::vector<T> att(weights.size(), floor_v);
  const T span = T(1) - floor_v;
  if (kind == NormKind::MagnitudeMinMax) {
    T lo = std::abs(weights[0]), hi = lo;
    for (size_t i = 1; i < weights.size(); ++i) {
      const T m = std::abs(weights[i]);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    const T range = hi - lo;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (!mask[i]) continue;
      if (range == T(0)) {
        att[i] = T(1);
      } else {
        const T rel = (std::abs(weights[i]) - lo) / range;
        att[i] = rel * span + floor_v;
      }
    }
  } else {
    std::vector<size_t> kept;
    for (size_t i = 0; i < weights.size(); ++i)
      if (mask[i]) kept.push_back(i);
    std::sort(kept.begin(), kept.end(), [&](size_t a, size_t b) {
      const T ma = std::abs(weights[a]), mb = std::abs(weights[b]);
      if (ma != mb) return ma < mb;
      return a < b;
    });
    const size_t m = kept.size();
    for (size_t r = 0; r < m; ++r) {
      att[kept[r]] = m == 1 ? T(1)
                            : floor_v + span * static_cast<T>(r) /
                                            static_cast<T>(m - 1);
    }
  }
  return att;
}

inline double mask_change_ratio(const std::vector<uint8_t>& prev,
                                const std::vector<uint8_t>& next) {
  if (prev.size() != next.size())
    throw ShapeError("mask length mismatch: " + std::to_string(prev.size()) +
                     " vs " + std::to_string(next.size()));
  size_t diff = 0;
  for (size_t i = 0; i < prev.size(); ++i)
    if (prev[i] != next[i]) ++diff;
  return prev.empty() ? 0.0 : static_cast<double>(diff) / static_cast<double>(prev.size());
}

}  // namespace prune

/// Pruning state for one run: per-parameter masks and attention over the
/// registry's prunable weights, plus the freeze bookkeeping.
template <typename T>
class PruneEngine {
 public:
  struct Settings {
    double strength = 1.0;        // z
    long update_every = 16;       // F, in iterations
    long exploit_start = 0;       // K, in iterations; updates stop once i > K
    NormScope scope = NormScope::Global;
    NormKind kind = NormKind::MagnitudeMinMax;
  };

  PruneEngine(const ParamRegistry<T>& reg, Settings s) : settings_(s) {
    for (size_t i = 0; i < reg.params().size(); ++i) {
      if (!reg.params()[i].prunable) continue;
      prunable_.push_back(i);
      mask_.emplace_back(reg.params()[i].value->size(), uint8_t{1});
      attention_.emplace_back(reg.params()[i].value->size(), T(1));
    }
    n_prunable_ = 0;
    for (const auto& m : mask_) n_prunable_ += m.size();
    if (n_prunable_ == 0) throw ConfigError("model has no prunable parameters");
  }

  const Settings& settings() const { return settings_; }
  double current_ratio() const { return ratio_; }
  double threshold() const { return threshold_; }
  bool frozen() const { return frozen_; }
  size_t n_prunable() const { return n_prunable_; }
  const std::vector<size_t>& prunable_indices() const { return prunable_; }
  std::vector<std::vector<uint8_t>>& mask() { return mask_; }
  const std::vector<std::vector<uint8_t>>& mask() const { return mask_; }
  std::vector<std::vector<T>>& attention() { return attention_; }
  const std::vector<std::vector<T>>& attention() const { return attention_; }

  void set_ratio(double ratio) {
    if (ratio < 0.0 || ratio >= 1.0)
      throw ConfigError("pruning ratio must lie in [0, 1)");
    ratio_ = ratio;
  }

  void set_frozen(bool f) { frozen_ = f; }
  void set_threshold(double t) { threshold_ = t; }

  /// Per-iteration gate: freezes the structure past the exploitation start,
  /// otherwise recomputes mask and attention every F-th iteration. Returns
  /// the mask change ratio when an update happened, -1 otherwise.
  double on_iteration(long iteration, const ParamRegistry<T>& reg) {
    if (iteration > settings_.exploit_start) frozen_ = true;
    if (frozen_ || iteration % settings_.update_every != 0) return -1.0;
    return recompute(reg);
  }

  /// Unconditional mask + attention refresh from the registry's raw weights.
  double recompute(const ParamRegistry<T>& reg) {
    std::vector<std::vector<uint8_t>> prev = mask_;
    // Global threshold over the concatenated prunable weights.
    std::vector<T> flat;
    flat.reserve(n_prunable_);
    for (size_t p : prunable_)
      for (T v : reg.params()[p].value->data) flat.push_back(v);
    auto flat_mask = prune::mask_for(flat, ratio_);
    {
      std::vector<T> mags(flat.size());
      for (size_t i = 0; i < flat.size(); ++i) mags[i] = std::abs(flat[i]);
      threshold_ = prune::threshold_for(mags, ratio_);
    }
    size_t off = 0;
    for (size_t pi = 0; pi < prunable_.size(); ++pi) {
      const size_t n = mask_[pi].size();
      std::copy(flat_mask.begin() + off, flat_mask.begin() + off + n,
                mask_[pi].begin());
      off += n;
    }
    if (settings_.scope == NormScope::Global) {
      auto att = prune::attention_for(flat, flat_mask, ratio_,
                                      settings_.strength, settings_.kind);
      off = 0;
      for (size_t pi = 0; pi < prunable_.size(); ++pi) {
        const size_t n = attention_[pi].size();
        std::copy(att.begin() + off, att.begin() + off + n,
                  attention_[pi].begin());
        off += n;
      }
    } else {
      for (size_t pi = 0; pi < prunable_.size(); ++pi) {
        const auto& w = reg.params()[prunable_[pi]].value->data;
        attention_[pi] = prune::attention_for(w, mask_[pi], ratio_,
                                              settings_.strength, settings_.kind);
      }
    }
    size_t diff = 0;
    for (size_t pi = 0; pi < mask_.size(); ++pi)
      for (size_t i = 0; i < mask_[pi].size(); ++i)
        if (mask_[pi][i] != prev[pi][i]) ++diff;
    return static_cast<double>(diff) / static_cast<double>(n_prunable_);
  }

  /// Effective weights seen by the forward pass, built as fresh autodiff
  /// leaves: attention * mask * w for variant D, mask * w otherwise.
  std::map<std::string, TensorPtr<T>> effective_weights(
      const ParamRegistry<T>& reg, Variant v, bool with_grad) const {
    std::map<std::string, TensorPtr<T>> eff;
    for (size_t pi = 0; pi < prunable_.size(); ++pi) {
      const auto& p = reg.params()[prunable_[pi]];
      auto t = make_tensor<T>(p.value->shape, with_grad);
      const auto& m = mask_[pi];
      const auto& a = attention_[pi];
      if (v == Variant::D) {
        for (size_t i = 0; i < t->size(); ++i)
          t->data[i] = a[i] * (static_cast<T>(m[i]) * p.value->data[i]);
      } else {
        for (size_t i = 0; i < t->size(); ++i)
          t->data[i] = static_cast<T>(m[i]) * p.value->data[i];
      }
      eff.emplace(p.name, std::move(t));
    }
    return eff;
  }

  /// Per-variant gradient scaling applied to d(loss)/d(effective weights)
  /// before the optimizer step, realizing the straight-through estimate.
  std::vector<std::vector<T>> backward_scale(Variant v) const {
    std::vector<std::vector<T>> scale(mask_.size());
    const T floor_v =
        static_cast<T>(prune::attention_floor(ratio_, settings_.strength));
    for (size_t pi = 0; pi < mask_.size(); ++pi) {
      const auto& m = mask_[pi];
      const auto& a = attention_[pi];
      auto& s = scale[pi];
      s.resize(m.size());
      switch (v) {
        case Variant::Dense:
        case Variant::B:
          std::fill(s.begin(), s.end(), T(1));
          break;
        case Variant::A:
          for (size_t i = 0; i < m.size(); ++i) s[i] = static_cast<T>(m[i]);
          break;
        case Variant::C:
          for (size_t i = 0; i < m.size(); ++i)
            s[i] = m[i] ? T(1) : floor_v;
          break;
        case Variant::DNoFA:
        case Variant::D:
          // Pruned entries of the attention already sit at the floor.
          s.assign(a.begin(), a.end());
          break;
      }
    }
    return scale;
  }

  /// Realized sparsity: fraction of zero mask bits.
  double actual_sparsity() const {
    size_t zeros = 0;
    for (const auto& m : mask_)
      for (uint8_t b : m)
        if (!b) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(n_prunable_);
  }

  std::vector<uint8_t> flat_mask() const {
    std::vector<uint8_t> out;
    out.reserve(n_prunable_);
    for (const auto& m : mask_) out.insert(out.end(), m.begin(), m.end());
    return out;
  }

  std::vector<T> flat_attention() const {
    std::vector<T> out;
    out.reserve(n_prunable_);
    for (const auto& a : attention_) out.insert(out.end(), a.begin(), a.end());
    return out;
  }

 private:
  Settings settings_;
  std::vector<size_t> prunable_;
  std::vector<std::vector<uint8_t>> mask_;
  std::vector<std::vector<T>> attention_;
  size_t n_prunable_ = 0;
  double ratio_ = 0.0;
  double threshold_ = 0.0;
  bool frozen_ = false;
};

}  // namespace mapdp
