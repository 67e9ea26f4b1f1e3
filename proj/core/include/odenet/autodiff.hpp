#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape records every operation applied to its Vars. Operations are whole
// tensor ops (matmul, batch normalization, ...), so the tape stays short
// even for deep unrolled integrations. Batch reductions sum in fixed
// left-to-right order, which makes values and gradients bit-reproducible.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "odenet/basis.hpp"
#include "odenet/tensor.hpp"

namespace odenet::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Backward closure: receives the node's output gradient and accumulates
  /// into its parents through Tape::accumulate.
  using Backward = std::function<void(Tape&, const Tensor& grad)>;

  /// With `record = false` no backward closures are stored (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// A differentiable input.
  Var variable(Tensor value);

  /// Record an op result. `parents` decide whether the node needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> parents, Backward backward);

  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar. Throws ContractError for non-scalars.
  void backward(const Var& output);

  /// Gradient of the last backward() output w.r.t. `v` (zeros if unreached).
  Tensor grad(const Var& v) const;

  void accumulate(const Var& v, const Tensor& g);
  /// Accumulate g * scale into v's gradient.
  void accumulate_scaled(const Var& v, const Tensor& g, double scale);
  /// Mutable gradient buffer for custom backward closures.
  Tensor& grad_buffer(const Var& v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  // Deque: references to existing nodes stay valid while pushing.
  std::deque<Node> nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Primitives. Shape mismatches throw ShapeError naming both shapes.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// [n, m] x [m, k] -> [n, k].
Var matmul(const Var& a, const Var& b);
/// x[n, d] + b[d] broadcast over the leading batch axis.
Var add_rowwise(const Var& x, const Var& b);
/// x[n, d] * s[d] broadcast over the leading batch axis.
Var mul_rowwise(const Var& x, const Var& s);
/// Subgradient 0 at the kink.
Var relu(const Var& x);
/// Per-feature mean over the batch axis: [n, d] -> [d].
Var batch_mean(const Var& x);
/// Per-feature biased (1/n) variance over the batch axis: [n, d] -> [d].
Var batch_var(const Var& x);
/// (x - mean) / sqrt(var + eps) * scale + bias, per feature, all inputs differentiable.
Var normalize(const Var& x, const Var& mean, const Var& var, const Var& scale,
              const Var& bias, double eps);
/// Mean softmax cross-entropy of logits [n, c] against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
/// Sum of all elements -> scalar.
Var sum(const Var& x);
/// sum_i weight_i * coeffs[index_i] over the leading axis of `coeffs`;
/// the result has the trailing shape of `coeffs`.
Var basis_combine(const Var& coeffs, const BasisSupport& support);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

bool all_finite(const Var& v);

// ---------------------------------------------------------------------------

/// Ordered named tensors with unique path-like names ("block0/dense1/kernel").
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  Tensor& operator[](const std::string& name);
  const Tensor& operator[](const std::string& name) const;
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  const std::string& name(std::size_t i) const { return entries_[i].first; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_elements() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Tape variables for every entry of a ParamStore, addressable by name.
class ParamVars {
 public:
  ParamVars(Tape& tape, const ParamStore& store, bool differentiable = true);

  const Var& operator[](const std::string& name) const;
  const Var& at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const noexcept { return vars_.size(); }

 private:
  const ParamStore* store_;
  std::vector<Var> vars_;
};

using ScalarFn = std::function<Var(Tape&, const ParamVars&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamStore grads;
};

/// f(params) and df/dp for every entry of `params`.
ValueAndGrad value_and_grad(const ScalarFn& f, const ParamStore& params);

/// f(params) evaluated without recording gradients.
double evaluate(const ScalarFn& f, const ParamStore& params);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_param;
};

/// Compare reverse-mode gradients with central differences of the given
/// step. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport finite_diff_check(const ScalarFn& f, const ParamStore& params, double step);

}  // namespace odenet::ad
