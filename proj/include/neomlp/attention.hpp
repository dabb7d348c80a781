#pragma once

#include "neomlp/autodiff.hpp"
#include "neomlp/config.hpp"

namespace neomlp {

// Self-attention mixing of already-projected queries, keys and values.
//
// The inputs hold `groups` independent token sets stacked as
// (groups * tokens) x D rows; every group attends only to itself, all-to-all
// including self edges. Heads split the D columns into contiguous slices of
// D / heads. The result is the per-head mix before the output projection.
//
//   softmax: softmax_rows(Q K^T / sqrt(d_head)) V
//   linear:  rho_q(Q) (rho_k(K)^T V), where rho_q is a softmax over the
//            feature axis of each query and rho_k a softmax over the token
//            axis of each key feature. Cost is linear in the token count.

template <class S>
Var<S> attention_mix(Var<S> q, Var<S> k, Var<S> v, Index tokens, int heads, AttentionKind kind);

template <class S>
Mat<S> attention_mix(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, Index tokens, int heads,
                     AttentionKind kind);

}  // namespace neomlp
