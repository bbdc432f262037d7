#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mapdp/common.hpp"

namespace mapdp {

/// Dense n-d float tensor participating in a reverse-mode tape.
/// Gradients live alongside the data; leaves are created with a zero-filled
/// grad buffer so unreached tensors read as zero gradient after backward.
template <typename T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  size_t size() const { return data.size(); }

  size_t dim(size_t i) const { return shape.at(i); }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

namespace detail {

inline size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!debug_checks()) return;
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw Error(std::string("non-finite value in output of ") + op);
  }
}

// C[m x n] += A[m x k] * B[k x n]. Accumulation over k is index-ascending
// per output element; the inner j loop vectorizes without reassociation.
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[k x n] += A^T[k x m] * G[m x n], with A given as [m x k].
template <typename T>
void matmul_at_acc(const T* a, const T* g, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* gi = g + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      T* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

// C[m x k] += G[m x n] * B^T[n x k], with B given as [k x n]; B is
// transposed into scratch first so the inner loop stays contiguous.
template <typename T>
void matmul_bt_acc(const T* g, const T* b, T* c, size_t m, size_t k, size_t n,
                   std::vector<T>& scratch) {
  scratch.resize(n * k);
  for (size_t p = 0; p < k; ++p)
    for (size_t j = 0; j < n; ++j) scratch[j * k + p] = b[p * n + j];
  for (size_t i = 0; i < m; ++i) {
    const T* gi = g + i * n;
    T* ci = c + i * k;
    for (size_t j = 0; j < n; ++j) {
      const T gij = gi[j];
      const T* bt = scratch.data() + j * k;
      for (size_t p = 0; p < k; ++p) ci[p] += gij * bt[p];
    }
  }
}

}  // namespace detail

template <typename T>
TensorPtr<T> make_tensor(std::vector<size_t> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->data.assign(detail::shape_numel(t->shape), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->data.size(), T(0));
  return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<size_t> shape, std::vector<T> data,
                         bool requires_grad = false) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  if (data.size() != t->data.size())
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + detail::shape_str(t->shape));
  t->data = std::move(data);
  return t;
}

/// Records forward ops in topological order; one backward sweep visits each
/// recorded op exactly once, in reverse.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. The tape is
  /// consumed afterwards; rebuild the graph for another sweep.
  void backward(const TensorPtr<T>& loss) {
    if (loss->size() != 1)
      throw Error("backward requires a scalar loss, got shape " +
                  detail::shape_str(loss->shape));
    if (consumed_) throw Error("tape already consumed by a previous backward");
    if (loss->grad.empty()) loss->grad.assign(1, T(0));
    loss->grad[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

namespace detail {

template <typename T>
void prepare_output_grad(const TensorPtr<T>& out) {
  out->grad.assign(out->data.size(), T(0));
}

}  // namespace detail

template <typename T>
TensorPtr<T> matmul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->dim(1) != b->dim(0))
    throw ShapeError("matmul shape mismatch: " + detail::shape_str(a->shape) +
                     " vs " + detail::shape_str(b->shape));
  const size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = make_tensor<T>({m, n});
  detail::matmul_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  detail::check_finite(*out, "matmul");
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    tape.record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        std::vector<T> scratch;
        detail::matmul_bt_acc(out->grad.data(), b->data.data(), a->grad.data(),
                              m, k, n, scratch);
      }
      if (b->requires_grad) {
        detail::matmul_at_acc(a->data.data(), out->grad.data(), b->grad.data(),
                              m, k, n);
      }
    });
  }
  return out;
}

/// Hadamard product of same-shaped tensors.
template <typename T>
TensorPtr<T> mul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw ShapeError("elementwise mul shape mismatch: " +
                     detail::shape_str(a->shape) + " vs " +
                     detail::shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  for (size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  detail::check_finite(*out, "mul");
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    tape.record([a, b, out] {
      if (a->requires_grad)
        for (size_t i = 0; i < out->size(); ++i)
          a->grad[i] += out->grad[i] * b->data[i];
      if (b->requires_grad)
        for (size_t i = 0; i < out->size(); ++i)
          b->grad[i] += out->grad[i] * a->data[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> relu(Tape<T>& tape, const TensorPtr<T>& a) {
  auto out = make_tensor<T>(a->shape);
  for (size_t i = 0; i < out->size(); ++i)
    out->data[i] = a->data[i] > T(0) ? a->data[i] : T(0);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    tape.record([a, out] {
      for (size_t i = 0; i < out->size(); ++i)
        if (a->data[i] > T(0)) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

/// Row-broadcast bias add: a[m x n] + bias[n].
template <typename T>
TensorPtr<T> add_bias(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& bias) {
  if (a->shape.size() != 2 || bias->shape.size() != 1 || a->dim(1) != bias->dim(0))
    throw ShapeError("add_bias shape mismatch: " + detail::shape_str(a->shape) +
                     " vs " + detail::shape_str(bias->shape));
  const size_t m = a->dim(0), n = a->dim(1);
  auto out = make_tensor<T>(a->shape);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      out->data[i * n + j] = a->data[i * n + j] + bias->data[j];
  detail::check_finite(*out, "add_bias");
  out->requires_grad = a->requires_grad || bias->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    tape.record([a, bias, out, m, n] {
      if (a->requires_grad)
        for (size_t i = 0; i < m * n; ++i) a->grad[i] += out->grad[i];
      if (bias->requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) bias->grad[j] += out->grad[i * n + j];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& a) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (size_t i = 0; i < a->size(); ++i) acc += a->data[i];
  out->data[0] = acc;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    tape.record([a, out] {
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0];
    });
  }
  return out;
}

/// Mean cross-entropy over the batch, stabilized by per-row max subtraction.
/// Backward produces (softmax - onehot) / batch per row.
template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels) {
  if (logits->shape.size() != 2)
    throw ShapeError("softmax_cross_entropy expects 2-d logits, got " +
                     detail::shape_str(logits->shape));
  const size_t b = logits->dim(0), c = logits->dim(1);
  if (b == 0) throw Error("softmax_cross_entropy: empty batch");
  if (labels.size() != b)
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match batch " + std::to_string(b));
  for (int y : labels)
    if (y < 0 || static_cast<size_t>(y) >= c)
      throw Error("label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(c) + ")");

  // Softmax rows are cached for the backward rule.
  auto probs = std::make_shared<std::vector<T>>(b * c);
  auto out = make_tensor<T>({1});
  T total = T(0);
  for (size_t i = 0; i < b; ++i) {
    const T* row = logits->data.data() + i * c;
    T mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (size_t j = 0; j < c; ++j) {
      const T e = std::exp(row[j] - mx);
      (*probs)[i * c + j] = e;
      denom += e;
    }
    const T log_denom = std::log(denom);
    for (size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= denom;
    total += log_denom - (row[static_cast<size_t>(labels[i])] - mx);
  }
  out->data[0] = total / static_cast<T>(b);
  detail::check_finite(*out, "softmax_cross_entropy");
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    detail::prepare_output_grad(out);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    tape.record([logits, out, probs, labels_copy, b, c] {
      const T g = out->grad[0] / static_cast<T>(b);
      for (size_t i = 0; i < b; ++i) {
        for (size_t j = 0; j < c; ++j)
          logits->grad[i * c + j] += g * (*probs)[i * c + j];
        logits->grad[i * c + static_cast<size_t>((*labels_copy)[i])] -= g;
      }
    });
  }
  return out;
}

}  // namespace mapdp
