#include "neomlp/model.hpp"

#include "neomlp/error.hpp"

#include <array>
#include <cmath>
#include <type_traits>

namespace neomlp {

// ---- latents -------------------------------------------------------------

template <class S>
RowVec<S> LatentSet<S>::flatten() const {
  const Index D = width();
  RowVec<S> flat((hidden.rows() + output.rows()) * D);
  if (hidden.size() > 0) flat.head(hidden.size()) = Eigen::Map<const RowVec<S>>(hidden.data(), hidden.size());
  flat.tail(output.size()) = Eigen::Map<const RowVec<S>>(output.data(), output.size());
  return flat;
}

template <class S>
LatentSet<S> LatentSet<S>::unflatten(const Eigen::Ref<const RowVec<S>>& flat, Index H, Index O, Index D) {
  if (flat.size() != (H + O) * D) throw ConfigError("latent vector length does not match (H + O) * D");
  LatentSet<S> z;
  z.hidden = Eigen::Map<const Mat<S>>(flat.data(), H, D);
  z.output = Eigen::Map<const Mat<S>>(flat.data() + H * D, O, D);
  return z;
}

template <class S>
LatentSet<S> init_latents(int hidden, int output, int width, double variance, Rng& rng) {
  if (hidden < 0 || output < 1 || width < 1) throw ConfigError("init_latents: invalid shape");
  const double sd = std::sqrt(variance);
  auto draw = [&](Index rows) {
    Mat<S> m(rows, width);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(sd == 0.0 ? 0.0 : rng.normal(0.0, sd));
    return m;
  };
  LatentSet<S> z;
  z.hidden = draw(hidden);
  z.output = draw(output);
  return z;
}

// ---- token assembly ------------------------------------------------------

template <class S>
Mat<S> assemble_tokens(const Mat<S>& input_tokens, const LatentSet<S>& latents) {
  const Index D = input_tokens.cols();
  if (latents.output.cols() != D || (latents.hidden.rows() > 0 && latents.hidden.cols() != D))
    throw ConfigError("assemble_tokens: latent width does not match the input token width");
  Mat<S> t(input_tokens.rows() + latents.hidden.rows() + latents.output.rows(), D);
  t << input_tokens, latents.hidden, latents.output;
  return t;
}

template <class S>
TokenBlocks<S> split_tokens(const Mat<S>& tokens, Index I, Index H, Index O) {
  if (tokens.rows() != I + H + O) throw ConfigError("split_tokens: row count does not match I + H + O");
  return {tokens.topRows(I), tokens.middleRows(I, H), tokens.bottomRows(O)};
}

template <class S>
Var<S> assemble_tokens(Var<S> input_tokens, Var<S> latent_rows, Index I, Index H, Index O) {
  const Mat<S>& X = input_tokens.value();
  const Mat<S>& Z = latent_rows.value();
  const Index D = X.cols();
  const Index B = Z.rows();
  const Index N = I + H + O;
  if (X.rows() != B * I) throw ConfigError("assemble_tokens: input token rows do not match the batch");
  if (Z.cols() != (H + O) * D) throw ConfigError("assemble_tokens: latent width does not match the token width");
  Mat<S> out(B * N, D);
  for (Index b = 0; b < B; ++b) {
    out.middleRows(b * N, I) = X.middleRows(b * I, I);
    out.middleRows(b * N + I, H + O) = Eigen::Map<const Mat<S>>(Z.row(b).data(), H + O, D);
  }
  const std::array<int, 2> in{input_tokens.id, latent_rows.id};
  return input_tokens.tape->push(std::move(out), in,
                                 [ix = input_tokens.id, iz = latent_rows.id, I, H, O, N, B, D](Tape<S>& t, int self) {
                                   const Mat<S>& g = t.grad(self);
                                   if (t.needs_grad(ix)) {
                                     Mat<S>& gx = t.grad(ix);
                                     for (Index b = 0; b < B; ++b) gx.middleRows(b * I, I) += g.middleRows(b * N, I);
                                   }
                                   if (t.needs_grad(iz)) {
                                     Mat<S>& gz = t.grad(iz);
                                     for (Index b = 0; b < B; ++b)
                                       Eigen::Map<Mat<S>>(gz.row(b).data(), H + O, D) += g.middleRows(b * N + I, H + O);
                                   }
                                 });
}

// ---- layers --------------------------------------------------------------

namespace {

template <class S>
Var<S> activate(Var<S> x, Activation act) {
  return act == Activation::Silu ? silu(x) : gelu(x);
}

template <class S>
LayerVars<S> constant_layer(Tape<S>& tape, const LayerWeights<S>& w) {
  return {tape.constant_ref(w.wq), tape.constant_ref(w.wk), tape.constant_ref(w.wv),
          tape.constant_ref(w.wo), tape.constant_ref(w.bo), tape.constant_ref(w.w1),
          tape.constant_ref(w.b1), tape.constant_ref(w.w2), tape.constant_ref(w.b2)};
}

template <class S>
Var<S> self_attention(Var<S> x, const LayerVars<S>& w, Index tokens, int heads, AttentionKind kind) {
  Var<S> mix = attention_mix(matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv), tokens, heads, kind);
  return affine(mix, w.wo, w.bo);
}

template <class S>
Var<S> ffn(Var<S> x, const LayerVars<S>& w, Activation act) {
  Var<S> h = activate(affine(x, w.w1, w.b1), act);
  return affine(h, w.w2, w.b2);
}

template <class S>
Mat<S> attention_sublayer(const Mat<S>& tokens, const LayerWeights<S>& w, int heads, AttentionKind kind) {
  Tape<S> tape;
  return self_attention(tape.constant_ref(tokens), constant_layer(tape, w), tokens.rows(), heads, kind).value();
}

}  // namespace

template <class S>
Mat<S> softmax_attention(const Mat<S>& tokens, const LayerWeights<S>& w, int heads) {
  return attention_sublayer(tokens, w, heads, AttentionKind::Softmax);
}

template <class S>
Mat<S> linear_attention(const Mat<S>& tokens, const LayerWeights<S>& w, int heads) {
  return attention_sublayer(tokens, w, heads, AttentionKind::Linear);
}

template <class S>
Mat<S> feed_forward(const Mat<S>& tokens, const LayerWeights<S>& w, Activation act) {
  Tape<S> tape;
  return ffn(tape.constant_ref(tokens), constant_layer(tape, w), act).value();
}

template <class S>
Mat<S> neomlp_layer(const Mat<S>& tokens, const LayerWeights<S>& w, int heads, AttentionKind kind,
                    Activation act) {
  Tape<S> tape;
  return neomlp_layer(tape.constant_ref(tokens), constant_layer(tape, w), tokens.rows(), heads, kind, act).value();
}

template <class S>
Var<S> neomlp_layer(Var<S> x, const LayerVars<S>& w, Index tokens, int heads, AttentionKind kind,
                    Activation act) {
  Var<S> mixed = add(x, self_attention(x, w, tokens, heads, kind));
  return add(mixed, ffn(mixed, w, act));
}

// ---- NeoMLP --------------------------------------------------------------

std::string layer_param_name(int layer, const char* leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

namespace {

template <class S>
Mat<S> uniform_init(Index rows, Index cols, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  Mat<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

constexpr const char* kBackbone = "backbone";

}  // namespace

template <class S>
NeoMLP<S>::NeoMLP(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const Index D = cfg_.token_dim;
  const Index F = cfg_.ffn_hidden;
  InputEncoder<S> enc = InputEncoder<S>::init(cfg_, rng);
  params_.add("encoder.rff.frequencies", kBackbone, std::move(enc.bank.frequencies), false, false);
  if (!cfg_.use_rff) {
    params_.add("encoder.lift.weight", kBackbone, std::move(enc.lift_weight));
    params_.add("encoder.lift.bias", kBackbone, std::move(enc.lift_bias));
  }
  params_.add("encoder.proj.weight", kBackbone, std::move(enc.proj_weight));
  params_.add("encoder.proj.bias", kBackbone, std::move(enc.proj_bias));
  params_.add("encoder.input_embeddings", kBackbone, std::move(enc.embeddings));
  for (int l = 0; l < cfg_.layers; ++l) {
    const double d = static_cast<double>(D);
    params_.add(layer_param_name(l, "attn.wq"), kBackbone, uniform_init<S>(D, D, d, rng));
    params_.add(layer_param_name(l, "attn.wk"), kBackbone, uniform_init<S>(D, D, d, rng));
    params_.add(layer_param_name(l, "attn.wv"), kBackbone, uniform_init<S>(D, D, d, rng));
    params_.add(layer_param_name(l, "attn.wo"), kBackbone, uniform_init<S>(D, D, d, rng));
    params_.add(layer_param_name(l, "attn.bo"), kBackbone, uniform_init<S>(1, D, d, rng));
    params_.add(layer_param_name(l, "ffn.w1"), kBackbone, uniform_init<S>(D, F, d, rng));
    params_.add(layer_param_name(l, "ffn.b1"), kBackbone, uniform_init<S>(1, F, d, rng));
    params_.add(layer_param_name(l, "ffn.w2"), kBackbone, uniform_init<S>(F, D, static_cast<double>(F), rng));
    params_.add(layer_param_name(l, "ffn.b2"), kBackbone, uniform_init<S>(1, D, static_cast<double>(F), rng));
  }
  params_.add("readout.weight", kBackbone, uniform_init<S>(D, 1, static_cast<double>(D), rng));
  params_.add("readout.bias", kBackbone, Mat<S>::Zero(1, 1));
}

template <class S>
NeoMLP<S>::NeoMLP(const ModelConfig& cfg, ParameterStore<S> params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  check_store();
}

template <class S>
void NeoMLP<S>::check_store() const {
  const Index D = cfg_.token_dim;
  const Index F = cfg_.ffn_hidden;
  auto expect = [&](const std::string& name, Index r, Index c) {
    if (!params_.contains(name)) throw ConfigError("backbone is missing parameter " + name);
    const auto& v = params_.at(name).value;
    if (v.rows() != r || v.cols() != c)
      throw ConfigError("parameter " + name + " has shape " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  expect("encoder.rff.frequencies", cfg_.input_dims, cfg_.d_rff / 2);
  if (!cfg_.use_rff) {
    expect("encoder.lift.weight", 1, cfg_.d_rff);
    expect("encoder.lift.bias", 1, cfg_.d_rff);
  }
  expect("encoder.proj.weight", cfg_.d_rff, D);
  expect("encoder.proj.bias", 1, D);
  expect("encoder.input_embeddings", cfg_.input_dims, D);
  for (int l = 0; l < cfg_.layers; ++l) {
    for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) expect(layer_param_name(l, n), D, D);
    expect(layer_param_name(l, "attn.bo"), 1, D);
    expect(layer_param_name(l, "ffn.w1"), D, F);
    expect(layer_param_name(l, "ffn.b1"), 1, F);
    expect(layer_param_name(l, "ffn.w2"), F, D);
    expect(layer_param_name(l, "ffn.b2"), 1, D);
  }
  expect("readout.weight", D, 1);
  expect("readout.bias", 1, 1);
}

template <class S>
template <class Self>
Var<S> NeoMLP<S>::forward_impl(Self& self, Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows) {
  const ModelConfig& c = self.cfg_;
  auto bind = [&](const std::string& name) -> Var<S> {
    auto& p = self.params_.at(name);
    if constexpr (std::is_const_v<Self>) {
      return tape.constant_ref(p.value);
    } else {
      return tape.leaf(p);
    }
  };
  const Index I = c.input_dims;
  const Index H = c.hidden_nodes;
  const Index O = c.output_dims;
  if (coords.cols() != I)
    throw ConfigError("forward: expected " + std::to_string(I) + " coordinates per point, got " +
                      std::to_string(coords.cols()));
  if (latent_rows.rows() != coords.rows() || latent_rows.cols() != (H + O) * c.token_dim)
    throw ConfigError("forward: latent rows must be B x (H + O) * D");

  EncoderVars<S> enc;
  if (c.use_rff) {
    enc.frequencies = &self.params_.at("encoder.rff.frequencies").value;
  } else {
    enc.lift_weight = bind("encoder.lift.weight");
    enc.lift_bias = bind("encoder.lift.bias");
  }
  enc.proj_weight = bind("encoder.proj.weight");
  enc.proj_bias = bind("encoder.proj.bias");
  enc.embeddings = bind("encoder.input_embeddings");

  Var<S> t = assemble_tokens(encode_input(tape, coords, enc), latent_rows, I, H, O);
  const Index N = I + H + O;
  for (int l = 0; l < c.layers; ++l) {
    LayerVars<S> w{bind(layer_param_name(l, "attn.wq")), bind(layer_param_name(l, "attn.wk")),
                   bind(layer_param_name(l, "attn.wv")), bind(layer_param_name(l, "attn.wo")),
                   bind(layer_param_name(l, "attn.bo")), bind(layer_param_name(l, "ffn.w1")),
                   bind(layer_param_name(l, "ffn.b1")),  bind(layer_param_name(l, "ffn.w2")),
                   bind(layer_param_name(l, "ffn.b2"))};
    t = neomlp_layer(t, w, N, c.heads, c.attention, c.ffn_activation);
  }
  Var<S> out_tokens = select_block_rows(t, N, I + H, O);
  Var<S> y = affine(out_tokens, bind("readout.weight"), bind("readout.bias"));
  return reshape(y, coords.rows(), O);
}

template <class S>
Var<S> NeoMLP<S>::forward(Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows) {
  return forward_impl(*this, tape, coords, latent_rows);
}

template <class S>
Var<S> NeoMLP<S>::forward(Tape<S>& tape, const Mat<S>& coords, Var<S> latent_rows) const {
  return forward_impl(*this, tape, coords, latent_rows);
}

template <class S>
Mat<S> NeoMLP<S>::predict(const Mat<S>& coords, const LatentSet<S>& latents) const {
  const Mat<S> bank = latents.flatten();
  std::vector<Index> rows(static_cast<size_t>(coords.rows()), 0);
  return predict(coords, bank, rows);
}

template <class S>
Mat<S> NeoMLP<S>::predict(const Mat<S>& coords, const Mat<S>& latent_bank, std::span<const Index> signal_of_row,
                          Index chunk) const {
  if (static_cast<Index>(signal_of_row.size()) != coords.rows())
    throw ConfigError("predict: one latent index per coordinate row is required");
  Mat<S> out(coords.rows(), cfg_.output_dims);
  for (Index start = 0; start < coords.rows(); start += chunk) {
    const Index n = std::min(chunk, coords.rows() - start);
    Mat<S> z(n, latent_bank.cols());
    for (Index r = 0; r < n; ++r) {
      const Index s = signal_of_row[static_cast<size_t>(start + r)];
      if (s < 0 || s >= latent_bank.rows()) throw ConfigError("predict: latent index out of range");
      z.row(r) = latent_bank.row(s);
    }
    Tape<S> tape;
    const Mat<S> x = coords.middleRows(start, n);
    out.middleRows(start, n) = forward(tape, x, tape.constant(std::move(z))).value();
  }
  return out;
}

template <class S>
InputEncoder<S> NeoMLP<S>::encoder() const {
  InputEncoder<S> enc;
  enc.use_rff = cfg_.use_rff;
  enc.bank.frequencies = params_.at("encoder.rff.frequencies").value;
  enc.bank.sigma = cfg_.rff_sigma;
  if (!cfg_.use_rff) {
    enc.lift_weight = params_.at("encoder.lift.weight").value;
    enc.lift_bias = params_.at("encoder.lift.bias").value;
  }
  enc.proj_weight = params_.at("encoder.proj.weight").value;
  enc.proj_bias = params_.at("encoder.proj.bias").value;
  enc.embeddings = params_.at("encoder.input_embeddings").value;
  return enc;
}

template <class S>
LayerWeights<S> NeoMLP<S>::layer(int l) const {
  if (l < 0 || l >= cfg_.layers) throw ConfigError("layer index out of range");
  auto get = [&](const char* n) { return params_.at(layer_param_name(l, n)).value; };
  return {get("attn.wq"), get("attn.wk"), get("attn.wv"), get("attn.wo"), get("attn.bo"),
          get("ffn.w1"),  get("ffn.b1"),  get("ffn.w2"),  get("ffn.b2")};
}

template <class S>
std::pair<Mat<S>, Mat<S>> NeoMLP<S>::readout() const {
  return {params_.at("readout.weight").value, params_.at("readout.bias").value};
}

#define NEOMLP_INSTANTIATE_MODEL(S)                                                                  \
  template struct LatentSet<S>;                                                                      \
  template LatentSet<S> init_latents<S>(int, int, int, double, Rng&);                                \
  template Mat<S> assemble_tokens(const Mat<S>&, const LatentSet<S>&);                               \
  template TokenBlocks<S> split_tokens(const Mat<S>&, Index, Index, Index);                          \
  template Var<S> assemble_tokens(Var<S>, Var<S>, Index, Index, Index);                              \
  template Mat<S> softmax_attention(const Mat<S>&, const LayerWeights<S>&, int);                     \
  template Mat<S> linear_attention(const Mat<S>&, const LayerWeights<S>&, int);                      \
  template Mat<S> feed_forward(const Mat<S>&, const LayerWeights<S>&, Activation);                   \
  template Mat<S> neomlp_layer(const Mat<S>&, const LayerWeights<S>&, int, AttentionKind, Activation); \
  template Var<S> neomlp_layer(Var<S>, const LayerVars<S>&, Index, int, AttentionKind, Activation);  \
  template class NeoMLP<S>;

NEOMLP_INSTANTIATE_MODEL(float)
NEOMLP_INSTANTIATE_MODEL(double)

}  // namespace neomlp
