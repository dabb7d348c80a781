#pragma once

#include "neomlp/autodiff.hpp"
#include "neomlp/config.hpp"
#include "neomlp/rng.hpp"
#include "neomlp/tensor.hpp"

namespace neomlp {

/// One independent bank of d_rff / 2 Gaussian frequencies per input
/// dimension. Sampled once, never trained.
template <class S>
struct RFFBank {
  Mat<S> frequencies;  // input_dims x d_rff/2
  double sigma = 0.0;

  [[nodiscard]] Index input_dims() const { return frequencies.rows(); }
  [[nodiscard]] Index d_rff() const { return 2 * frequencies.cols(); }
};

template <class S>
RFFBank<S> sample_rff_bank(int input_dims, int d_rff, double sigma, Rng& rng);

/// [cos(2 pi b x), sin(2 pi b x)] over the frequencies b of bank row `dim`.
/// Throws InputDomainError for non-finite x.
template <class S>
RowVec<S> rff_encode(S x, const RFFBank<S>& bank, Index dim = 0);

/// Features for a batch of coordinates (B x I); row b*I + i encodes x_bi with
/// the bank of dimension i.
template <class S>
Mat<S> rff_features(const Mat<S>& coords, const Mat<S>& frequencies);

/// I x D embeddings with i.i.d. N(0, variance) entries.
template <class S>
Mat<S> init_input_embeddings(int input_dims, int token_dim, double variance, Rng& rng);

/// Plain-value encoder: RFF (or learnable lift), shared projection to D, and
/// one learnable embedding per input dimension.
template <class S>
struct InputEncoder {
  RFFBank<S> bank;
  bool use_rff = true;
  Mat<S> lift_weight;  // 1 x d_rff, only without RFF
  Mat<S> lift_bias;    // 1 x d_rff, only without RFF
  Mat<S> proj_weight;  // d_rff x D
  Mat<S> proj_bias;    // 1 x D
  Mat<S> embeddings;   // I x D

  static InputEncoder init(const ModelConfig& cfg, Rng& rng);
};

template <class S>
struct EncoderVars {
  const Mat<S>* frequencies = nullptr;  // null without RFF
  Var<S> lift_weight;
  Var<S> lift_bias;
  Var<S> proj_weight;
  Var<S> proj_bias;
  Var<S> embeddings;
};

/// (B*I) x D input tokens; token b*I + i = proj(rff(x_bi)) + embeddings[i].
template <class S>
Var<S> encode_input(Tape<S>& tape, const Mat<S>& coords, const EncoderVars<S>& enc);

template <class S>
Mat<S> encode_input(const Mat<S>& coords, const InputEncoder<S>& enc);

}  // namespace neomlp
