#include "neomlp/encoding.hpp"

#include "neomlp/error.hpp"

#include <cmath>
#include <numbers>

namespace neomlp {

template <class S>
RFFBank<S> sample_rff_bank(int input_dims, int d_rff, double sigma, Rng& rng) {
  if (d_rff < 2 || d_rff % 2 != 0) throw ConfigError("d_rff must be a positive even integer");
  if (input_dims < 1) throw ConfigError("input_dims must be >= 1");
  RFFBank<S> bank;
  bank.sigma = sigma;
  bank.frequencies.resize(input_dims, d_rff / 2);
  for (Index i = 0; i < bank.frequencies.size(); ++i)
    bank.frequencies.data()[i] = static_cast<S>(sigma == 0.0 ? 0.0 : rng.normal(0.0, sigma));
  return bank;
}

namespace {

// Phases are formed in double and reduced to one period before the
// trigonometry: 2 pi b x reaches ~1e4 rad for time axes scaled to
// [-100, 100] and single precision would lose the low bits.
template <class S>
void reduced_phases(double x, const S* freq, Index half, S* out) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (Index k = 0; k < half; ++k) {
    const double turns = static_cast<double>(freq[k]) * x;
    out[k] = static_cast<S>(two_pi * (turns - std::nearbyint(turns)));
  }
}

template <class S>
void fill_trig(const Mat<S>& phases, Mat<S>& out) {
  const Index half = phases.cols();
  out.leftCols(half) = phases.array().cos().matrix();
  out.rightCols(half) = phases.array().sin().matrix();
}

}  // namespace

template <class S>
RowVec<S> rff_encode(S x, const RFFBank<S>& bank, Index dim) {
  if (!std::isfinite(static_cast<double>(x))) throw InputDomainError("rff_encode: non-finite coordinate");
  if (dim < 0 || dim >= bank.input_dims()) throw ConfigError("rff_encode: dimension out of range");
  const Index half = bank.frequencies.cols();
  Mat<S> phases(1, half);
  reduced_phases(static_cast<double>(x), bank.frequencies.row(dim).data(), half, phases.data());
  Mat<S> out(1, 2 * half);
  fill_trig(phases, out);
  return out;
}

template <class S>
Mat<S> rff_features(const Mat<S>& coords, const Mat<S>& frequencies) {
  const Index I = coords.cols();
  if (frequencies.rows() != I) throw ConfigError("rff_features: coordinate width does not match the bank");
  const Index half = frequencies.cols();
  Mat<S> phases(coords.rows() * I, half);
  for (Index b = 0; b < coords.rows(); ++b) {
    for (Index i = 0; i < I; ++i) {
      const double x = static_cast<double>(coords(b, i));
      if (!std::isfinite(x)) throw InputDomainError("rff_features: non-finite coordinate");
      reduced_phases(x, frequencies.row(i).data(), half, phases.row(b * I + i).data());
    }
  }
  Mat<S> out(coords.rows() * I, 2 * half);
  fill_trig(phases, out);
  return out;
}

template <class S>
Mat<S> init_input_embeddings(int input_dims, int token_dim, double variance, Rng& rng) {
  Mat<S> e(input_dims, token_dim);
  const double sd = std::sqrt(variance);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<S>(sd == 0.0 ? 0.0 : rng.normal(0.0, sd));
  return e;
}

template <class S>
InputEncoder<S> InputEncoder<S>::init(const ModelConfig& cfg, Rng& rng) {
  InputEncoder<S> enc;
  enc.use_rff = cfg.use_rff;
  enc.bank = sample_rff_bank<S>(cfg.input_dims, cfg.d_rff, cfg.rff_sigma, rng);
  if (!cfg.use_rff) {
    enc.lift_weight.resize(1, cfg.d_rff);
    for (Index i = 0; i < enc.lift_weight.size(); ++i) enc.lift_weight.data()[i] = static_cast<S>(rng.normal());
    enc.lift_bias = Mat<S>::Zero(1, cfg.d_rff);
  }
  // N(0, 2 / d_rff) keeps the projected features at roughly unit variance.
  const double sd = std::sqrt(2.0 / cfg.d_rff);
  enc.proj_weight.resize(cfg.d_rff, cfg.token_dim);
  for (Index i = 0; i < enc.proj_weight.size(); ++i) enc.proj_weight.data()[i] = static_cast<S>(rng.normal(0.0, sd));
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_rff));
  enc.proj_bias.resize(1, cfg.token_dim);
  for (Index i = 0; i < enc.proj_bias.size(); ++i) enc.proj_bias.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  enc.embeddings = init_input_embeddings<S>(cfg.input_dims, cfg.token_dim, cfg.input_embedding_variance, rng);
  return enc;
}

template <class S>
Var<S> encode_input(Tape<S>& tape, const Mat<S>& coords, const EncoderVars<S>& enc) {
  const Mat<S>& emb = enc.embeddings.value();
  if (coords.cols() != emb.rows())
    throw ConfigError("encode_input: expected " + std::to_string(emb.rows()) + " coordinates per point, got " +
                      std::to_string(coords.cols()));
  Var<S> features;
  if (enc.frequencies != nullptr) {
    features = tape.constant(rff_features(coords, *enc.frequencies));
  } else {
    for (Index i = 0; i < coords.size(); ++i)
      if (!std::isfinite(static_cast<double>(coords.data()[i])))
        throw InputDomainError("encode_input: non-finite coordinate");
    // Row b*I + i holds the scalar x_bi.
    Mat<S> scalars = Eigen::Map<const Mat<S>>(coords.data(), coords.size(), 1);
    features = affine(tape.constant(std::move(scalars)), enc.lift_weight, enc.lift_bias);
  }
  Var<S> projected = affine(features, enc.proj_weight, enc.proj_bias);
  return add_periodic_rows(projected, enc.embeddings);
}

template <class S>
Mat<S> encode_input(const Mat<S>& coords, const InputEncoder<S>& enc) {
  Tape<S> tape;
  EncoderVars<S> vars;
  if (enc.use_rff) {
    vars.frequencies = &enc.bank.frequencies;
  } else {
    vars.lift_weight = tape.constant_ref(enc.lift_weight);
    vars.lift_bias = tape.constant_ref(enc.lift_bias);
  }
  vars.proj_weight = tape.constant_ref(enc.proj_weight);
  vars.proj_bias = tape.constant_ref(enc.proj_bias);
  vars.embeddings = tape.constant_ref(enc.embeddings);
  return encode_input(tape, coords, vars).value();
}

#define NEOMLP_INSTANTIATE_ENCODING(S)                                                 \
  template struct RFFBank<S>;                                                          \
  template RFFBank<S> sample_rff_bank<S>(int, int, double, Rng&);                      \
  template RowVec<S> rff_encode(S, const RFFBank<S>&, Index);                          \
  template Mat<S> rff_features(const Mat<S>&, const Mat<S>&);                          \
  template Mat<S> init_input_embeddings<S>(int, int, double, Rng&);                    \
  template struct InputEncoder<S>;                                                     \
  template Var<S> encode_input(Tape<S>&, const Mat<S>&, const EncoderVars<S>&);        \
  template Mat<S> encode_input(const Mat<S>&, const InputEncoder<S>&);

NEOMLP_INSTANTIATE_ENCODING(float)
NEOMLP_INSTANTIATE_ENCODING(double)

}  // namespace neomlp
