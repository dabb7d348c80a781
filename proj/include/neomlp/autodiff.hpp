#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse and accumulates gradients into the Parameters that
// were bound as leaves.

#include "neomlp/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neomlp {

template <class S>
struct Parameter {
  std::string name;
  std::string group;
  Mat<S> value;
  Mat<S> grad;
  // Adam moments.
  Mat<S> m;
  Mat<S> v;
  long step = 0;
  bool frozen = false;
  // Persisted but never optimised (e.g. random Fourier frequencies).
  bool trainable = true;
  // Row-sparse parameters (latent banks) only step rows touched by a batch,
  // each row keeping its own step count.
  bool row_sparse = false;
  std::vector<long> row_steps;
  std::vector<uint8_t> row_touched;

  void touch_row(Index r) { row_touched[static_cast<size_t>(r)] = 1; }
  [[nodiscard]] Index size() const { return value.size(); }
};

template <class S>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = default;
  ParameterStore& operator=(const ParameterStore&) = default;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<S>& add(std::string name, std::string group, Mat<S> init, bool row_sparse = false,
                    bool trainable = true);

  [[nodiscard]] bool contains(std::string_view name) const;
  Parameter<S>& at(std::string_view name);
  [[nodiscard]] const Parameter<S>& at(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }
  [[nodiscard]] size_t size() const { return params_.size(); }

  void set_frozen(std::string_view group, bool frozen);
  [[nodiscard]] bool is_frozen(std::string_view group) const;
  void zero_grad();
  /// Number of trainable scalars (frozen groups included).
  [[nodiscard]] size_t num_trainable_scalars() const;

 private:
  // deque keeps Parameter addresses stable for tape leaves.
  std::deque<Parameter<S>> params_;
};

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  [[nodiscard]] bool valid() const { return tape != nullptr && id >= 0; }
  [[nodiscard]] const Mat<S>& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat<S> value);
  /// Borrowed constant; `value` must outlive the tape's use.
  Var<S> constant_ref(const Mat<S>& value);
  /// Binds a parameter; gradients flow into `p.grad` unless it is frozen.
  Var<S> leaf(Parameter<S>& p);
  Var<S> push(Mat<S> value, std::span<const int> inputs, Backward fn);

  [[nodiscard]] const Mat<S>& value(int id) const;
  [[nodiscard]] bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  /// Gradient slot of a node, zero-initialised on first access.
  Mat<S>& grad(int id);
  [[nodiscard]] bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad_ready; }

  /// Reverse sweep from a scalar (1x1) node.
  void backward(Var<S> loss);
  void clear() { nodes_.clear(); }
  [[nodiscard]] size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    const Mat<S>* ref = nullptr;
    Parameter<S>* param = nullptr;
    Mat<S> grad;
    bool needs_grad = false;
    bool grad_ready = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// ---- operations --------------------------------------------------------

template <class S>
Var<S> matmul(Var<S> a, Var<S> b);
/// a W + b with b broadcast over rows, fused into a single node.
template <class S>
Var<S> affine(Var<S> a, Var<S> w, Var<S> bias);
template <class S>
Var<S> add(Var<S> a, Var<S> b);
/// Elementwise product.
template <class S>
Var<S> mul(Var<S> a, Var<S> b);
/// a + bias, bias is 1 x cols broadcast over rows.
template <class S>
Var<S> add_row_bias(Var<S> a, Var<S> bias);
/// Row r of `a` gets row (r mod table.rows()) of `table` added.
template <class S>
Var<S> add_periodic_rows(Var<S> a, Var<S> table);
template <class S>
Var<S> scale(Var<S> a, S s);
/// Elementwise product with a constant (dropout masks).
template <class S>
Var<S> mul_const(Var<S> a, const Mat<S>& m);
template <class S>
Var<S> silu(Var<S> a);
template <class S>
Var<S> gelu(Var<S> a);
template <class S>
Var<S> relu(Var<S> a);
/// sin(w0 * a)
template <class S>
Var<S> sin_scaled(Var<S> a, S w0);
template <class S>
Var<S> square(Var<S> a);
template <class S>
Var<S> sum(Var<S> a);
template <class S>
Var<S> reshape(Var<S> a, Index rows, Index cols);
/// Rows `indices` of `bank`; gradients scatter-add back (duplicates sum).
template <class S>
Var<S> gather_rows(Var<S> bank, std::span<const Index> indices);
/// Keeps rows p*period + offset + c for c < count, for every period block p.
template <class S>
Var<S> select_block_rows(Var<S> a, Index period, Index offset, Index count);
/// Mean over unmasked entries of (pred - target)^2. mask entries are 0/1.
template <class S>
Var<S> masked_mse(Var<S> pred, const Mat<S>& target, const Mat<S>& mask);
/// Mean over rows of -sum_j target_ij log softmax(logits)_ij.
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, const Mat<S>& target);

}  // namespace neomlp
