#pragma once

#include "neomlp/attention.hpp"
#include "neomlp/autodiff.hpp"
#include "neomlp/config.hpp"
#include "neomlp/encoding.hpp"
#include "neomlp/rng.hpp"

#include <span>
#include <string>

namespace neomlp {

/// One signal's conditioning: H hidden and O output embeddings of width D.
template <class S>
struct LatentSet {
  Mat<S> hidden;  // H x D
  Mat<S> output;  // O x D
  std::string signal_id;
  int label = -1;

  [[nodiscard]] Index width() const { return output.cols(); }
  /// Hidden rows then output rows, row-major: length (H + O) * D.
  [[nodiscard]] RowVec<S> flatten() const;
  static LatentSet unflatten(const Eigen::Ref<const RowVec<S>>& flat, Index H, Index O, Index D);
};

template <class S>
LatentSet<S> init_latents(int hidden, int output, int width, double variance, Rng& rng);

/// [inputs; hidden; output] stacked along the token axis.
template <class S>
Mat<S> assemble_tokens(const Mat<S>& input_tokens, const LatentSet<S>& latents);

template <class S>
struct TokenBlocks {
  Mat<S> inputs;
  Mat<S> hidden;
  Mat<S> output;
};

template <class S>
TokenBlocks<S> split_tokens(const Mat<S>& tokens, Index I, Index H, Index O);

/// Batched assembly: (B*I) x D input tokens and B x ((H+O)*D) latent rows give
/// (B*(I+H+O)) x D, one token set per point.
template <class S>
Var<S> assemble_tokens(Var<S> input_tokens, Var<S> latent_rows, Index I, Index H, Index O);

template <class S>
struct LayerWeights {
  Mat<S> wq, wk, wv;  // D x D, no bias
  Mat<S> wo, bo;      // D x D, 1 x D
  Mat<S> w1, b1;      // D x F, 1 x F
  Mat<S> w2, b2;      // F x D, 1 x D
};

template <class S>
struct LayerVars {
  Var<S> wq, wk, wv, wo, bo, w1, b1, w2, b2;
};

// Single token-set reference operations (N x D in, N x D out).
template <class S>
Mat<S> softmax_attention(const Mat<S>& tokens, const LayerWeights<S>& w, int heads);
template <class S>
Mat<S> linear_attention(const Mat<S>& tokens, const LayerWeights<S>& w, int heads);
template <class S>
Mat<S> feed_forward(const Mat<S>& tokens, const LayerWeights<S>& w, Activation act);
template <class S>
Mat<S> neomlp_layer(const Mat<S>& tokens, const LayerWeights<S>& w, int heads, AttentionKind kind,
                    Activation act);

/// T~ = T + SelfAttention(T); T' = T~ + FFN(T~). `tokens` rows per group.
template <class S>
Var<S> neomlp_layer(Var<S> x, const LayerVars<S>& w, Index tokens, int heads, AttentionKind kind,
                    Activation act);

/// The NeoMLP backbone Θ. Conditioning latents are supplied per call.
template <class S>
class NeoMLP {
 public:
  NeoMLP(const ModelConfig& cfg, Rng& rng);
  /// Adopts an existing parameter store (checkpoint loading, precision casts).
  NeoMLP(const ModelConfig& cfg, ParameterStore<S> params);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  ParameterStore<S>& params() { return params_; }
  [[nodiscard]] const ParameterStore<S>& params() const { return params_; }

  /// Predictions (B x O) for coordinates (B x I) with latent rows
  /// (B x (H+O)*D). Backbone weights are tape leaves.
  Var<S> forward(Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows);
  /// Same, with the backbone recorded as constants (frozen).
  Var<S> forward(Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows) const;

  [[nodiscard]] Mat<S> predict(const Mat<S>& coords, const LatentSet<S>& latents) const;
  /// Row b uses latent bank row signal_of_row[b]; evaluated in chunks.
  [[nodiscard]] Mat<S> predict(const Mat<S>& coords, const Mat<S>& latent_bank,
                               std::span<const Index> signal_of_row, Index chunk = 2048) const;

  [[nodiscard]] InputEncoder<S> encoder() const;
  [[nodiscard]] LayerWeights<S> layer(int l) const;
  [[nodiscard]] std::pair<Mat<S>, Mat<S>> readout() const;

  template <class T>
  [[nodiscard]] NeoMLP<T> cast() const {
    ParameterStore<T> out;
    for (const auto& p : params_) out.add(p.name, p.group, p.value.template cast<T>(), p.row_sparse, p.trainable);
    return NeoMLP<T>(cfg_, std::move(out));
  }

 private:
  template <class Self>
  static Var<S> forward_impl(Self& self, Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows);
  void check_store() const;

  ModelConfig cfg_;
  ParameterStore<S> params_;
};

/// Parameter names as stored in checkpoints.
std::string layer_param_name(int layer, const char* leaf);

}  // namespace neomlp
