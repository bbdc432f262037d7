#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/rng.hpp"
#include "mapdp/tensor.hpp"

namespace mapdp {

enum class Activation { Relu, None };

struct LayerSpec {
  size_t in_dim = 0;
  size_t out_dim = 0;
  Activation act = Activation::Relu;
};

template <typename T>
struct Param {
  std::string name;
  TensorPtr<T> value;
  bool prunable = false;
};

/// Ordered, named parameter store for an MLP. Hidden-layer weight matrices
/// are flagged prunable; biases and the final layer's weights are not.
template <typename T>
class ParamRegistry {
 public:
  ParamRegistry() = default;

  static ParamRegistry build_mlp(const std::vector<LayerSpec>& specs, uint64_t seed) {
    if (specs.size() < 2) throw ConfigError("build_mlp requires at least 2 layers");
    for (size_t l = 0; l < specs.size(); ++l) {
      if (specs[l].in_dim == 0 || specs[l].out_dim == 0)
        throw ConfigError("layer dims must be positive");
      if (l > 0 && specs[l].in_dim != specs[l - 1].out_dim)
        throw ConfigError("layer " + std::to_string(l) + " in_dim " +
                          std::to_string(specs[l].in_dim) +
                          " does not chain from previous out_dim " +
                          std::to_string(specs[l - 1].out_dim));
    }
    ParamRegistry reg;
    reg.layers_ = specs;
    Rng rng(seed);
    for (size_t l = 0; l < specs.size(); ++l) {
      const auto& s = specs[l];
      const bool last = l + 1 == specs.size();
      auto w = make_tensor<T>({s.in_dim, s.out_dim});
      const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim));
      for (auto& v : w->data)
        v = static_cast<T>(rng.uniform(-bound, bound));
      auto b = make_tensor<T>({s.out_dim});
      const std::string prefix = "layer" + std::to_string(l);
      reg.params_.push_back({prefix + ".weight", w, !last});
      reg.params_.push_back({prefix + ".bias", b, false});
    }
    return reg;
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  const Param<T>& at(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p;
    throw Error("unknown parameter: " + name);
  }

  size_t n_prunable() const {
    size_t n = 0;
    for (const auto& p : params_)
      if (p.prunable) n += p.value->size();
    return n;
  }

  size_t n_total() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value->size();
    return n;
  }

  /// Forward pass over the MLP. Every prunable weight matrix must be
  /// substituted through `effective`; biases and non-prunable weights are
  /// read from the registry itself.
  TensorPtr<T> forward(Tape<T>& tape,
                       const std::map<std::string, TensorPtr<T>>& effective,
                       const TensorPtr<T>& batch) const {
    TensorPtr<T> x = batch;
    for (size_t l = 0; l < layers_.size(); ++l) {
      const std::string prefix = "layer" + std::to_string(l);
      const Param<T>& wp = at(prefix + ".weight");
      TensorPtr<T> w;
      if (wp.prunable) {
        auto it = effective.find(wp.name);
        if (it == effective.end())
          throw Error("missing effective weights for prunable parameter " + wp.name);
        w = it->second;
      } else {
        auto it = effective.find(wp.name);
        w = it != effective.end() ? it->second : wp.value;
      }
      x = add_bias(tape, matmul(tape, x, w), at(prefix + ".bias").value);
      if (layers_[l].act == Activation::Relu) x = relu(tape, x);
    }
    return x;
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Param<T>> params_;
};

inline std::vector<LayerSpec> mlp_specs(const std::vector<size_t>& dims) {
  if (dims.size() < 3) throw ConfigError("architecture needs at least in-hidden-out dims");
  std::vector<LayerSpec> specs;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    specs.push_back({dims[i], dims[i + 1], last ? Activation::None : Activation::Relu});
  }
  return specs;
}

}  // namespace mapdp
