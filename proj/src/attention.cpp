#include "neomlp/attention.hpp"

#include "neomlp/error.hpp"

#include <algorithm>
#include <array>
#include <type_traits>
#include <cmath>
#include <limits>
#include <vector>

namespace neomlp {

namespace {

struct Layout {
  Index groups;
  Index tokens;
  Index width;  // D
  Index heads;
  Index hd;

  // Offset of token i of group g, head h.
  [[nodiscard]] Index at(Index g, Index i, Index h) const { return (g * tokens + i) * width + h * hd; }
};

Layout make_layout(Index rows, Index cols, Index tokens, int heads) {
  if (tokens <= 0 || rows % tokens != 0) throw ConfigError("attention: rows are not a multiple of the token count");
  if (heads <= 0 || cols % heads != 0) throw ConfigError("attention: width not divisible by heads");
  return {rows / tokens, tokens, cols, heads, cols / heads};
}

// Head width is a template parameter for the common sizes so the inner loops
// compile to fixed-length vector code; HD == 0 falls back to the runtime width.
template <int HD>
Index width_of(const Layout& L) {
  if constexpr (HD > 0) {
    return HD;
  } else {
    return L.hd;
  }
}

template <class S, int HD>
inline S dot(const S* __restrict a, const S* __restrict b, Index n) {
  if constexpr (HD > 0) n = HD;
  S acc = 0;
  for (Index d = 0; d < n; ++d) acc += a[d] * b[d];
  return acc;
}

template <class S, int HD>
inline void axpy(S alpha, const S* __restrict x, S* __restrict y, Index n) {
  if constexpr (HD > 0) n = HD;
  for (Index d = 0; d < n; ++d) y[d] += alpha * x[d];
}

template <class S>
void exp_inplace(S* data, Index n) {
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> a(data, n);
  a = a.exp();
}

// C += sum_i a_i^T b_i over `rows` pairs of hd-vectors spaced `stride` apart.
template <class S, int HD>
void outer_sum(const S* __restrict a, const S* __restrict b, Index rows, Index stride, Index hd, S* __restrict C) {
  if constexpr (HD > 0) {
    alignas(64) S acc[HD * HD] = {};
    for (Index i = 0; i < rows; ++i) {
      const S* ar = a + i * stride;
      const S* br = b + i * stride;
      for (int d = 0; d < HD; ++d)
        for (int e = 0; e < HD; ++e) acc[d * HD + e] += ar[d] * br[e];
    }
    for (int x = 0; x < HD * HD; ++x) C[x] += acc[x];
  } else {
    for (Index i = 0; i < rows; ++i)
      for (Index d = 0; d < hd; ++d)
        for (Index e = 0; e < hd; ++e) C[d * hd + e] += a[i * stride + d] * b[i * stride + e];
  }
}

// out = a C for an hd-vector a and an hd x hd matrix C.
template <class S, int HD>
void vec_mat(const S* __restrict a, const S* __restrict C, Index hd, S* __restrict out) {
  if constexpr (HD > 0) {
    alignas(64) S acc[HD] = {};
    for (int d = 0; d < HD; ++d)
      for (int e = 0; e < HD; ++e) acc[e] += a[d] * C[d * HD + e];
    for (int e = 0; e < HD; ++e) out[e] = acc[e];
  } else {
    std::fill(out, out + hd, S(0));
    for (Index d = 0; d < hd; ++d)
      for (Index e = 0; e < hd; ++e) out[e] += a[d] * C[d * hd + e];
  }
}

// out = C b.
template <class S, int HD>
void mat_vec(const S* __restrict C, const S* __restrict b, Index hd, S* __restrict out) {
  if constexpr (HD > 0) hd = HD;
  for (Index d = 0; d < hd; ++d) out[d] = dot<S, HD>(C + d * hd, b, hd);
}

// ---- softmax attention ---------------------------------------------------

template <class S, int HD>
void softmax_forward(const Layout& L, const S* q, const S* k, const S* v, S* out, S* probs) {
  const Index hd = width_of<HD>(L);
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  const Index N = L.tokens;
  for (Index g = 0; g < L.groups; ++g) {
    for (Index h = 0; h < L.heads; ++h) {
      S* A = probs + (g * L.heads + h) * N * N;
      for (Index i = 0; i < N; ++i) {
        S* row = A + i * N;
        S mx = -std::numeric_limits<S>::infinity();
        for (Index j = 0; j < N; ++j) {
          row[j] = dot<S, HD>(q + L.at(g, i, h), k + L.at(g, j, h), hd) * scale;
          mx = std::max(mx, row[j]);
        }
        for (Index j = 0; j < N; ++j) row[j] -= mx;
      }
    }
    exp_inplace(probs + g * L.heads * N * N, L.heads * N * N);
    for (Index h = 0; h < L.heads; ++h) {
      S* A = probs + (g * L.heads + h) * N * N;
      for (Index i = 0; i < N; ++i) {
        S* row = A + i * N;
        S z = 0;
        for (Index j = 0; j < N; ++j) z += row[j];
        const S inv = S(1) / z;
        for (Index j = 0; j < N; ++j) row[j] *= inv;
        S* o = out + L.at(g, i, h);
        std::fill(o, o + hd, S(0));
        for (Index j = 0; j < N; ++j) axpy<S, HD>(row[j], v + L.at(g, j, h), o, hd);
      }
    }
  }
}

template <class S, int HD>
void softmax_backward(const Layout& L, const S* q, const S* k, const S* v, const S* probs, const S* dout, S* dq,
                      S* dk, S* dv) {
  const Index hd = width_of<HD>(L);
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  const Index N = L.tokens;
  std::vector<S> dA(static_cast<size_t>(N));
  for (Index g = 0; g < L.groups; ++g) {
    for (Index h = 0; h < L.heads; ++h) {
      const S* A = probs + (g * L.heads + h) * N * N;
      for (Index i = 0; i < N; ++i) {
        const S* row = A + i * N;
        const S* go = dout + L.at(g, i, h);
        S rowdot = 0;
        for (Index j = 0; j < N; ++j) {
          dA[j] = dot<S, HD>(go, v + L.at(g, j, h), hd);
          rowdot += dA[j] * row[j];
          if (dv != nullptr) axpy<S, HD>(row[j], go, dv + L.at(g, j, h), hd);
        }
        for (Index j = 0; j < N; ++j) {
          const S ds = row[j] * (dA[j] - rowdot) * scale;
          if (dq != nullptr) axpy<S, HD>(ds, k + L.at(g, j, h), dq + L.at(g, i, h), hd);
          if (dk != nullptr) axpy<S, HD>(ds, q + L.at(g, i, h), dk + L.at(g, j, h), hd);
        }
      }
    }
  }
}

// ---- linear attention ----------------------------------------------------

template <class S, int HD>
void linear_forward(const Layout& L, const S* q, const S* k, const S* v, S* out, S* qn, S* kn, S* ctx) {
  const Index N = L.tokens;
  const Index hd = width_of<HD>(L);
  const Index D = L.width;
  const Index total = L.groups * N * D;

  // Queries: softmax across the features of each (token, head) slice. The
  // slices are contiguous, so the whole buffer is one run of chunks.
  for (Index c = 0; c < total; c += hd) {
    S mx = q[c];
    for (Index d = 1; d < hd; ++d) mx = std::max(mx, q[c + d]);
    for (Index d = 0; d < hd; ++d) qn[c + d] = q[c + d] - mx;
  }
  exp_inplace(qn, total);
  for (Index c = 0; c < total; c += hd) {
    S z = 0;
    for (Index d = 0; d < hd; ++d) z += qn[c + d];
    const S inv = S(1) / z;
    for (Index d = 0; d < hd; ++d) qn[c + d] *= inv;
  }

  // Keys: softmax across tokens, independently per feature column.
  std::vector<S> col(static_cast<size_t>(D));
  for (Index g = 0; g < L.groups; ++g) {
    const S* kg = k + g * N * D;
    S* ng = kn + g * N * D;
    std::copy(kg, kg + D, col.begin());
    for (Index i = 1; i < N; ++i)
      for (Index d = 0; d < D; ++d) col[d] = std::max(col[d], kg[i * D + d]);
    for (Index i = 0; i < N; ++i)
      for (Index d = 0; d < D; ++d) ng[i * D + d] = kg[i * D + d] - col[d];
  }
  exp_inplace(kn, total);
  for (Index g = 0; g < L.groups; ++g) {
    S* ng = kn + g * N * D;
    std::fill(col.begin(), col.end(), S(0));
    for (Index i = 0; i < N; ++i)
      for (Index d = 0; d < D; ++d) col[d] += ng[i * D + d];
    for (Index d = 0; d < D; ++d) col[d] = S(1) / col[d];
    for (Index i = 0; i < N; ++i)
      for (Index d = 0; d < D; ++d) ng[i * D + d] *= col[d];
  }

  // Context: kn^T v (hd x hd) per head, then out = qn * context.
  for (Index g = 0; g < L.groups; ++g) {
    for (Index h = 0; h < L.heads; ++h) {
      S* C = ctx + (g * L.heads + h) * hd * hd;
      std::fill(C, C + hd * hd, S(0));
      outer_sum<S, HD>(kn + L.at(g, 0, h), v + L.at(g, 0, h), N, D, hd, C);
      for (Index i = 0; i < N; ++i) vec_mat<S, HD>(qn + L.at(g, i, h), C, hd, out + L.at(g, i, h));
    }
  }
}

template <class S, int HD>
void linear_backward(const Layout& L, const S* v, const S* qn, const S* kn, const S* ctx, const S* dout, S* dq,
                     S* dk, S* dv) {
  const Index N = L.tokens;
  const Index hd = width_of<HD>(L);
  const Index D = L.width;
  std::vector<S> dC(static_cast<size_t>(hd * hd));
  std::vector<S> tmp(static_cast<size_t>(hd));
  std::vector<S> dkn(static_cast<size_t>(N * D));
  std::vector<S> col(static_cast<size_t>(D));
  for (Index g = 0; g < L.groups; ++g) {
    for (Index h = 0; h < L.heads; ++h) {
      const S* C = ctx + (g * L.heads + h) * hd * hd;
      // dC = qn^T dout; d qn = dout C^T.
      std::fill(dC.begin(), dC.end(), S(0));
      outer_sum<S, HD>(qn + L.at(g, 0, h), dout + L.at(g, 0, h), N, D, hd, dC.data());
      if (dq != nullptr) {
        for (Index i = 0; i < N; ++i) {
          const S* qr = qn + L.at(g, i, h);
          mat_vec<S, HD>(C, dout + L.at(g, i, h), hd, tmp.data());
          const S rowdot = dot<S, HD>(tmp.data(), qr, hd);
          S* gq = dq + L.at(g, i, h);
          for (Index d = 0; d < hd; ++d) gq[d] += qr[d] * (tmp[d] - rowdot);
        }
      }
      // d kn = v dC^T; dv = kn dC.
      for (Index i = 0; i < N; ++i) {
        mat_vec<S, HD>(dC.data(), v + L.at(g, i, h), hd, dkn.data() + i * D + h * hd);
        if (dv != nullptr) {
          vec_mat<S, HD>(kn + L.at(g, i, h), dC.data(), hd, tmp.data());
          S* gv = dv + L.at(g, i, h);
          for (Index e = 0; e < hd; ++e) gv[e] += tmp[e];
        }
      }
    }
    if (dk != nullptr) {
      const S* ng = kn + g * N * D;
      S* gk = dk + g * N * D;
      std::fill(col.begin(), col.end(), S(0));
      for (Index i = 0; i < N; ++i)
        for (Index d = 0; d < D; ++d) col[d] += dkn[i * D + d] * ng[i * D + d];
      for (Index i = 0; i < N; ++i)
        for (Index d = 0; d < D; ++d) gk[i * D + d] += ng[i * D + d] * (dkn[i * D + d] - col[d]);
    }
  }
}

template <class S, class F>
void dispatch_width(Index hd, F&& f) {
  switch (hd) {
    case 8: f(std::integral_constant<int, 8>{}); break;
    case 16: f(std::integral_constant<int, 16>{}); break;
    case 32: f(std::integral_constant<int, 32>{}); break;
    case 64: f(std::integral_constant<int, 64>{}); break;
    default: f(std::integral_constant<int, 0>{}); break;
  }
}

template <class S>
void check_operands(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols())
    throw ConfigError("attention: q, k, v shapes differ");
}

}  // namespace

template <class S>
Var<S> attention_mix(Var<S> q, Var<S> k, Var<S> v, Index tokens, int heads, AttentionKind kind) {
  const Mat<S>& Q = q.value();
  const Mat<S>& K = k.value();
  const Mat<S>& V = v.value();
  check_operands(Q, K, V);
  const Layout L = make_layout(Q.rows(), Q.cols(), tokens, heads);
  Mat<S> out(Q.rows(), Q.cols());
  const std::array<int, 3> in{q.id, k.id, v.id};
  if (kind == AttentionKind::Softmax) {
    Mat<S> probs(L.groups * L.heads * L.tokens, L.tokens);
    dispatch_width<S>(L.hd, [&](auto hd) {
      softmax_forward<S, decltype(hd)::value>(L, Q.data(), K.data(), V.data(), out.data(), probs.data());
    });
    return q.tape->push(std::move(out), in,
                        [L, iq = q.id, ik = k.id, iv = v.id, probs = std::move(probs)](Tape<S>& t, int self) {
                          S* dq = t.needs_grad(iq) ? t.grad(iq).data() : nullptr;
                          S* dk = t.needs_grad(ik) ? t.grad(ik).data() : nullptr;
                          S* dv = t.needs_grad(iv) ? t.grad(iv).data() : nullptr;
                          dispatch_width<S>(L.hd, [&](auto hd) {
                            softmax_backward<S, decltype(hd)::value>(L, t.value(iq).data(), t.value(ik).data(),
                                                                     t.value(iv).data(), probs.data(),
                                                                     t.grad(self).data(), dq, dk, dv);
                          });
                        });
  }
  Mat<S> qn(Q.rows(), Q.cols());
  Mat<S> kn(K.rows(), K.cols());
  Mat<S> ctx(L.groups * L.heads * L.hd, L.hd);
  dispatch_width<S>(L.hd, [&](auto hd) {
    linear_forward<S, decltype(hd)::value>(L, Q.data(), K.data(), V.data(), out.data(), qn.data(), kn.data(),
                                           ctx.data());
  });
  return q.tape->push(std::move(out), in,
                      [L, iq = q.id, ik = k.id, iv = v.id, qn = std::move(qn), kn = std::move(kn),
                       ctx = std::move(ctx)](Tape<S>& t, int self) {
                        S* dq = t.needs_grad(iq) ? t.grad(iq).data() : nullptr;
                        S* dk = t.needs_grad(ik) ? t.grad(ik).data() : nullptr;
                        S* dv = t.needs_grad(iv) ? t.grad(iv).data() : nullptr;
                        dispatch_width<S>(L.hd, [&](auto hd) {
                          linear_backward<S, decltype(hd)::value>(L, t.value(iv).data(), qn.data(), kn.data(),
                                                                  ctx.data(), t.grad(self).data(), dq, dk, dv);
                        });
                      });
}

template <class S>
Mat<S> attention_mix(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, Index tokens, int heads,
                     AttentionKind kind) {
  Tape<S> tape;
  return attention_mix(tape.constant_ref(q), tape.constant_ref(k), tape.constant_ref(v), tokens, heads, kind)
      .value();
}

template Var<float> attention_mix(Var<float>, Var<float>, Var<float>, Index, int, AttentionKind);
template Var<double> attention_mix(Var<double>, Var<double>, Var<double>, Index, int, AttentionKind);
template Mat<float> attention_mix(const Mat<float>&, const Mat<float>&, const Mat<float>&, Index, int,
                                  AttentionKind);
template Mat<double> attention_mix(const Mat<double>&, const Mat<double>&, const Mat<double>&, Index, int,
                                   AttentionKind);

}  // namespace neomlp
