#include "neomlp/autodiff.hpp"

#include "neomlp/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace neomlp {

// ---- ParameterStore ----------------------------------------------------

template <class S>
Parameter<S>& ParameterStore<S>::add(std::string name, std::string group, Mat<S> init,
                                     bool row_sparse, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter<S>& p = params_.emplace_back();
  p.name = std::move(name);
  p.group = std::move(group);
  p.grad = Mat<S>::Zero(init.rows(), init.cols());
  p.m = Mat<S>::Zero(init.rows(), init.cols());
  p.v = Mat<S>::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  p.row_sparse = row_sparse;
  p.trainable = trainable;
  if (row_sparse) {
    p.row_steps.assign(static_cast<size_t>(p.value.rows()), 0);
    p.row_touched.assign(static_cast<size_t>(p.value.rows()), 0);
  }
  return p;
}

template <class S>
bool ParameterStore<S>::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

template <class S>
Parameter<S>& ParameterStore<S>::at(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

template <class S>
const Parameter<S>& ParameterStore<S>::at(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + std::string(name));
}

template <class S>
void ParameterStore<S>::set_frozen(std::string_view group, bool frozen) {
  for (auto& p : params_)
    if (p.group == group) p.frozen = frozen;
}

template <class S>
bool ParameterStore<S>::is_frozen(std::string_view group) const {
  bool any = false;
  for (const auto& p : params_) {
    if (p.group != group) continue;
    any = true;
    if (!p.frozen) return false;
  }
  return any;
}

template <class S>
void ParameterStore<S>::zero_grad() {
  for (auto& p : params_) {
    p.grad.setZero();
    if (p.row_sparse) std::fill(p.row_touched.begin(), p.row_touched.end(), 0);
  }
}

template <class S>
size_t ParameterStore<S>::num_trainable_scalars() const {
  size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += static_cast<size_t>(p.value.size());
  return n;
}

// ---- Tape ----------------------------------------------------------------

template <class S>
const Mat<S>& Var<S>::value() const {
  if (!valid()) throw UsageError("use of an unbound Var");
  return tape->value(id);
}

template <class S>
Var<S> Tape<S>::constant(Mat<S> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class S>
Var<S> Tape<S>::constant_ref(const Mat<S>& value) {
  Node& n = nodes_.emplace_back();
  n.ref = &value;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class S>
Var<S> Tape<S>::leaf(Parameter<S>& p) {
  Node& n = nodes_.emplace_back();
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = p.trainable && !p.frozen;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class S>
Var<S> Tape<S>::push(Mat<S> value, std::span<const int> inputs, Backward fn) {
  bool needs = false;
  for (int i : inputs) needs = needs || nodes_[static_cast<size_t>(i)].needs_grad;
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(fn);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class S>
const Mat<S>& Tape<S>::value(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.ref != nullptr ? *n.ref : n.value;
}

template <class S>
Mat<S>& Tape<S>::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_ready) {
    const Mat<S>& v = value(id);
    n.grad = Mat<S>::Zero(v.rows(), v.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

template <class S>
void Tape<S>::backward(Var<S> loss) {
  if (nodes_.empty() || !loss.valid()) throw UsageError("backward() called without a recorded forward pass");
  if (loss.tape != this) throw UsageError("backward() on a Var from another tape");
  const Mat<S>& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) throw UsageError("backward() requires a scalar loss");
  grad(loss.id)(0, 0) = S(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || !n.grad_ready) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// ---- operations --------------------------------------------------------

namespace {

template <class S>
void check_same_tape(Var<S> a, Var<S> b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) throw UsageError("operands live on different tapes");
}

template <class S>
void check_shape(bool ok, const char* op, const Mat<S>& a, const Mat<S>& b) {
  if (!ok)
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
}

}  // namespace

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  check_same_tape(a, b);
  const Mat<S>& A = a.value();
  const Mat<S>& B = b.value();
  check_shape<S>(A.cols() == B.rows(), "matmul", A, B);
  Mat<S> C(A.rows(), B.cols());
  C.noalias() = A * B;
  const std::array<int, 2> in{a.id, b.id};
  return a.tape->push(std::move(C), in, [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <class S>
Var<S> affine(Var<S> a, Var<S> w, Var<S> bias) {
  check_same_tape(a, w);
  check_same_tape(a, bias);
  const Mat<S>& A = a.value();
  const Mat<S>& W = w.value();
  const Mat<S>& b = bias.value();
  check_shape<S>(A.cols() == W.rows(), "affine", A, W);
  check_shape<S>(b.rows() == 1 && b.cols() == W.cols(), "affine", W, b);
  Mat<S> C(A.rows(), W.cols());
  C.noalias() = A * W;
  C.rowwise() += b.row(0);
  const std::array<int, 3> in{a.id, w.id, bias.id};
  return a.tape->push(std::move(C), in, [ia = a.id, iw = w.id, ib = bias.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(iw).transpose();
    if (t.needs_grad(iw)) t.grad(iw).noalias() += t.value(ia).transpose() * g;
    if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  check_same_tape(a, b);
  const Mat<S>& A = a.value();
  const Mat<S>& B = b.value();
  check_shape<S>(A.rows() == B.rows() && A.cols() == B.cols(), "add", A, B);
  const std::array<int, 2> in{a.id, b.id};
  return a.tape->push(A + B, in, [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  check_same_tape(a, b);
  const Mat<S>& A = a.value();
  const Mat<S>& B = b.value();
  check_shape<S>(A.rows() == B.rows() && A.cols() == B.cols(), "mul", A, B);
  const std::array<int, 2> in{a.id, b.id};
  return a.tape->push(A.cwiseProduct(B), in, [ia = a.id, ib = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <class S>
Var<S> add_row_bias(Var<S> a, Var<S> bias) {
  check_same_tape(a, bias);
  const Mat<S>& A = a.value();
  const Mat<S>& b = bias.value();
  check_shape<S>(b.rows() == 1 && b.cols() == A.cols(), "add_row_bias", A, b);
  Mat<S> out = A;
  out.rowwise() += b.row(0);
  const std::array<int, 2> in{a.id, bias.id};
  return a.tape->push(std::move(out), in, [ia = a.id, ib = bias.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

template <class S>
Var<S> add_periodic_rows(Var<S> a, Var<S> table) {
  check_same_tape(a, table);
  const Mat<S>& A = a.value();
  const Mat<S>& T = table.value();
  check_shape<S>(T.cols() == A.cols() && T.rows() > 0 && A.rows() % T.rows() == 0, "add_periodic_rows", A,
                 T);
  const Index period = T.rows();
  Mat<S> out = A;
  for (Index r = 0; r < out.rows(); ++r) out.row(r) += T.row(r % period);
  const std::array<int, 2> in{a.id, table.id};
  return a.tape->push(std::move(out), in, [ia = a.id, it = table.id, period](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(it)) {
      Mat<S>& gt = t.grad(it);
      for (Index r = 0; r < g.rows(); ++r) gt.row(r % period) += g.row(r);
    }
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  const std::array<int, 1> in{a.id};
  return a.tape->push(a.value() * s, in, [ia = a.id, s](Tape<S>& t, int self) {
    t.grad(ia) += t.grad(self) * s;
  });
}

template <class S>
Var<S> mul_const(Var<S> a, const Mat<S>& m) {
  const Mat<S>& A = a.value();
  check_shape<S>(A.rows() == m.rows() && A.cols() == m.cols(), "mul_const", A, m);
  const std::array<int, 1> in{a.id};
  return a.tape->push(A.cwiseProduct(m), in, [ia = a.id, m](Tape<S>& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(m);
  });
}

template <class S>
Var<S> silu(Var<S> a) {
  const Mat<S>& A = a.value();
  Mat<S> sig = (S(1) + (-A.array()).exp()).inverse().matrix();
  Mat<S> out = (A.array() * sig.array()).matrix();
  const std::array<int, 1> in{a.id};
  return a.tape->push(std::move(out), in, [ia = a.id, sig = std::move(sig)](Tape<S>& t, int self) {
    const auto x = t.value(ia).array();
    const auto s = sig.array();
    t.grad(ia).array() += t.grad(self).array() * s * (S(1) + x * (S(1) - s));
  });
}

template <class S>
Var<S> gelu(Var<S> a) {
  const Mat<S>& A = a.value();
  Mat<S> out(A.rows(), A.cols());
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  for (Index i = 0; i < A.size(); ++i) {
    const S x = A.data()[i];
    out.data()[i] = S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
  }
  const std::array<int, 1> in{a.id};
  return a.tape->push(std::move(out), in, [ia = a.id, inv_sqrt2](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const S* x = t.value(ia).data();
    S* gi = t.grad(ia).data();
    const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
    for (Index i = 0; i < g.size(); ++i) {
      const S cdf = S(0.5) * (S(1) + std::erf(x[i] * inv_sqrt2));
      const S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * x[i] * x[i]);
      gi[i] += g.data()[i] * (cdf + x[i] * pdf);
    }
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  const std::array<int, 1> in{a.id};
  return a.tape->push(a.value().cwiseMax(S(0)), in, [ia = a.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& x = t.value(ia);
    t.grad(ia) += (x.array() > S(0)).select(g, S(0)).matrix();
  });
}

template <class S>
Var<S> sin_scaled(Var<S> a, S w0) {
  const std::array<int, 1> in{a.id};
  return a.tape->push((a.value().array() * w0).sin().matrix(), in, [ia = a.id, w0](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad(ia).array() += g.array() * (t.value(ia).array() * w0).cos() * w0;
  });
}

template <class S>
Var<S> square(Var<S> a) {
  const std::array<int, 1> in{a.id};
  return a.tape->push(a.value().cwiseAbs2(), in, [ia = a.id](Tape<S>& t, int self) {
    t.grad(ia).array() += S(2) * t.grad(self).array() * t.value(ia).array();
  });
}

template <class S>
Var<S> sum(Var<S> a) {
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  const std::array<int, 1> in{a.id};
  return a.tape->push(std::move(out), in, [ia = a.id](Tape<S>& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

template <class S>
Var<S> reshape(Var<S> a, Index rows, Index cols) {
  const Mat<S>& A = a.value();
  if (rows * cols != A.size()) throw ConfigError("reshape: element count mismatch");
  Mat<S> out = Eigen::Map<const Mat<S>>(A.data(), rows, cols);
  const std::array<int, 1> in{a.id};
  return a.tape->push(std::move(out), in, [ia = a.id](Tape<S>& t, int self) {
    Mat<S>& gi = t.grad(ia);
    const Mat<S>& g = t.grad(self);
    Eigen::Map<Mat<S>>(gi.data(), g.rows(), g.cols()) += g;
  });
}

template <class S>
Var<S> gather_rows(Var<S> bank, std::span<const Index> indices) {
  const Mat<S>& B = bank.value();
  Mat<S> out(static_cast<Index>(indices.size()), B.cols());
  for (size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= B.rows()) throw ConfigError("gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = B.row(indices[r]);
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  const std::array<int, 1> in{bank.id};
  return bank.tape->push(std::move(out), in, [ib = bank.id, idx = std::move(idx)](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& gb = t.grad(ib);
    for (size_t r = 0; r < idx.size(); ++r) gb.row(idx[r]) += g.row(static_cast<Index>(r));
  });
}

template <class S>
Var<S> select_block_rows(Var<S> a, Index period, Index offset, Index count) {
  const Mat<S>& A = a.value();
  if (period <= 0 || A.rows() % period != 0 || offset < 0 || offset + count > period)
    throw ConfigError("select_block_rows: bad block layout");
  const Index blocks = A.rows() / period;
  Mat<S> out(blocks * count, A.cols());
  for (Index p = 0; p < blocks; ++p) out.middleRows(p * count, count) = A.middleRows(p * period + offset, count);
  const std::array<int, 1> in{a.id};
  return a.tape->push(std::move(out), in, [ia = a.id, period, offset, count, blocks](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& gi = t.grad(ia);
    for (Index p = 0; p < blocks; ++p) gi.middleRows(p * period + offset, count) += g.middleRows(p * count, count);
  });
}

template <class S>
Var<S> masked_mse(Var<S> pred, const Mat<S>& target, const Mat<S>& mask) {
  const Mat<S>& P = pred.value();
  check_shape<S>(P.rows() == target.rows() && P.cols() == target.cols(), "masked_mse", P, target);
  check_shape<S>(P.rows() == mask.rows() && P.cols() == mask.cols(), "masked_mse", P, mask);
  const S count = mask.sum();
  if (count <= S(0)) throw InputDomainError("masked_mse: every entry of the batch is masked");
  Mat<S> diff = (P - target).cwiseProduct(mask);
  Mat<S> out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  const std::array<int, 1> in{pred.id};
  return pred.tape->push(std::move(out), in,
                         [ip = pred.id, diff = std::move(diff), count](Tape<S>& t, int self) {
                           t.grad(ip) += diff * (S(2) * t.grad(self)(0, 0) / count);
                         });
}

template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, const Mat<S>& target) {
  const Mat<S>& L = logits.value();
  check_shape<S>(L.rows() == target.rows() && L.cols() == target.cols(), "softmax_cross_entropy", L, target);
  Mat<S> prob(L.rows(), L.cols());
  S total = 0;
  for (Index r = 0; r < L.rows(); ++r) {
    const S mx = L.row(r).maxCoeff();
    prob.row(r) = (L.row(r).array() - mx).exp().matrix();
    const S z = prob.row(r).sum();
    prob.row(r) /= z;
    const S log_z = std::log(z) + mx;
    total -= (target.row(r).array() * (L.row(r).array() - log_z)).sum();
  }
  const S n = static_cast<S>(L.rows());
  Mat<S> out(1, 1);
  out(0, 0) = total / n;
  const std::array<int, 1> in{logits.id};
  return logits.tape->push(std::move(out), in,
                           [il = logits.id, prob = std::move(prob), target, n](Tape<S>& t, int self) {
                             const Mat<S> row_mass = target.rowwise().sum();
                             Mat<S> g = prob;
                             for (Index r = 0; r < g.rows(); ++r) g.row(r) *= row_mass(r, 0);
                             g -= target;
                             t.grad(il) += g * (t.grad(self)(0, 0) / n);
                           });
}

#define NEOMLP_INSTANTIATE_AUTODIFF(S)                                               \
  template struct Parameter<S>;                                                      \
  template class ParameterStore<S>;                                                  \
  template struct Var<S>;                                                            \
  template class Tape<S>;                                                            \
  template Var<S> matmul(Var<S>, Var<S>);                                            \
  template Var<S> add(Var<S>, Var<S>);                                               \
  template Var<S> mul(Var<S>, Var<S>);                                               \
  template Var<S> add_row_bias(Var<S>, Var<S>);                                      \
  template Var<S> add_periodic_rows(Var<S>, Var<S>);                                 \
  template Var<S> scale(Var<S>, S);                                                  \
  template Var<S> mul_const(Var<S>, const Mat<S>&);                                  \
  template Var<S> affine(Var<S>, Var<S>, Var<S>);                                   \
  template Var<S> silu(Var<S>);                                                      \
  template Var<S> gelu(Var<S>);                                                      \
  template Var<S> relu(Var<S>);                                                      \
  template Var<S> sin_scaled(Var<S>, S);                                             \
  template Var<S> square(Var<S>);                                                    \
  template Var<S> sum(Var<S>);                                                       \
  template Var<S> reshape(Var<S>, Index, Index);                                     \
  template Var<S> gather_rows(Var<S>, std::span<const Index>);                       \
  template Var<S> select_block_rows(Var<S>, Index, Index, Index);                    \
  template Var<S> masked_mse(Var<S>, const Mat<S>&, const Mat<S>&);                  \
  template Var<S> softmax_cross_entropy(Var<S>, const Mat<S>&);

NEOMLP_INSTANTIATE_AUTODIFF(float)
NEOMLP_INSTANTIATE_AUTODIFF(double)

}  // namespace neomlp
