#include "neomlp/verify.hpp"

#include "neomlp/attention.hpp"
#include "neomlp/error.hpp"
#include "neomlp/model.hpp"
#include "neomlp/optim.hpp"
#include "neomlp/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace neomlp {

using json = nlohmann::json;

json SuiteResult::to_json() const {
  return json{{"name", name},       {"ok", ok},           {"max_error", max_error},
              {"tolerance", tolerance}, {"seconds", seconds}, {"details", details}};
}

bool VerifyReport::ok() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.ok; });
}

json VerifyReport::to_json() const {
  json j{{"ok", ok()}, {"seconds", seconds}};
  auto& arr = j["suites"] = json::array();
  for (const auto& s : suites) arr.push_back(s.to_json());
  return j;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<uint64_t>(hi - lo + 1))); }

template <class S>
Mat<S> random_mat(Index r, Index c, double scale, Rng& rng) {
  Mat<S> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-scale, scale));
  return m;
}

std::vector<int> random_perm(int n, Rng& rng) {
  std::vector<int> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng.engine());
  return p;
}

template <class S>
Mat<S> permute_rows(const Mat<S>& m, const std::vector<int>& perm) {
  Mat<S> out(m.rows(), m.cols());
  for (size_t j = 0; j < perm.size(); ++j) out.row(static_cast<Index>(j)) = m.row(perm[j]);
  return out;
}

template <class S>
LatentSet<S> cast_latents(const LatentSet<double>& z) {
  LatentSet<S> out;
  out.hidden = z.hidden.cast<S>();
  out.output = z.output.cast<S>();
  return out;
}

}  // namespace

ModelConfig random_tiny_config(uint64_t seed) {
  Rng rng(seed, "verify.config");
  ModelConfig c;
  c.input_dims = pick(rng, 1, 3);
  c.hidden_nodes = pick(rng, 1, 4);
  c.output_dims = pick(rng, 1, 3);
  c.token_dim = rng.uniform() < 0.5 ? 4 : 8;
  c.heads = rng.uniform() < 0.5 ? 1 : 2;
  c.layers = pick(rng, 1, 2);
  c.ffn_hidden = 2 * c.token_dim;
  c.d_rff = 8;
  c.rff_sigma = 1.0;
  c.attention = rng.uniform() < 0.5 ? AttentionKind::Linear : AttentionKind::Softmax;
  c.ffn_activation = rng.uniform() < 0.5 ? Activation::Silu : Activation::Gelu;
  c.latent_variance = 1.0;
  return c;
}

// ---- symmetry --------------------------------------------------------------

SuiteResult symmetry_suite(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  SuiteResult r;
  r.name = "symmetry";
  r.tolerance = 1e-10;
  const int models = opts.fast ? 4 : 10;
  const int perms = opts.fast ? 8 : 20;
  double err32 = 0.0, err64 = 0.0, out32 = 0.0, out64 = 0.0, min_sensitivity = 1e300;
  for (int mi = 0; mi < models; ++mi) {
    const uint64_t seed = derive_seed(opts.seed, "symmetry." + std::to_string(mi));
    ModelConfig c = random_tiny_config(seed);
    Rng rng(seed, "init");
    NeoMLP<double> m64(c, rng);
    const NeoMLP<float> m32 = m64.cast<float>();
    const auto z = init_latents<double>(c.hidden_nodes, c.output_dims, c.token_dim, 1.0, rng);
    const Mat<double> x64 = random_mat<double>(8, c.input_dims, 1.0, rng);
    const Mat<float> x32 = x64.cast<float>();
    const Mat<double> y64 = m64.predict(x64, z);
    const Mat<float> y32 = m32.predict(x32, cast_latents<float>(z));

    for (int k = 0; k < perms; ++k) {
      const auto perm = random_perm(c.hidden_nodes, rng);
      LatentSet<double> zp = z;
      zp.hidden = permute_rows(z.hidden, perm);
      err64 = std::max(err64, (m64.predict(x64, zp) - y64).cwiseAbs().maxCoeff());
      err32 = std::max(err32, static_cast<double>((m32.predict(x32, cast_latents<float>(zp)) - y32).cwiseAbs().maxCoeff()));

      const auto operm = random_perm(c.output_dims, rng);
      LatentSet<double> zo = z;
      zo.output = permute_rows(z.output, operm);
      const Mat<double> yo64 = m64.predict(x64, zo);
      const Mat<float> yo32 = m32.predict(x32, cast_latents<float>(zo));
      for (int j = 0; j < c.output_dims; ++j) {
        out64 = std::max(out64, (yo64.col(j) - y64.col(operm[static_cast<size_t>(j)])).cwiseAbs().maxCoeff());
        out32 = std::max(out32, static_cast<double>((yo32.col(j) - y32.col(operm[static_cast<size_t>(j)])).cwiseAbs().maxCoeff()));
      }
    }
    // The check is vacuous if hidden latents do not influence the output.
    LatentSet<double> zs = z;
    zs.hidden(0, 0) += 0.5;
    min_sensitivity = std::min(min_sensitivity, (m64.predict(x64, zs) - y64).cwiseAbs().maxCoeff());
  }
  r.max_error = std::max(err64, out64);
  const bool ok32 = err32 < 1e-5 && out32 < 1e-5;
  const bool ok64 = err64 < 1e-10 && out64 < 1e-10;
  const bool sensitive = min_sensitivity > 1e-8;
  r.ok = ok32 && ok64 && sensitive;
  r.details = json{{"models", models},
                   {"permutations_per_model", perms},
                   {"hidden_max_abs_error_f32", err32},
                   {"hidden_max_abs_error_f64", err64},
                   {"output_equivariance_error_f32", out32},
                   {"output_equivariance_error_f64", out64},
                   {"tolerance_f32", 1e-5},
                   {"tolerance_f64", 1e-10},
                   {"min_hidden_sensitivity", min_sensitivity}};
  r.seconds = since(t0);
  return r;
}

// ---- gradients -----------------------------------------------------------

namespace {

void corrupt_attention(ParameterStore<double>& params) { params.at("layers.0.attn.wq").value(0, 0) += 0.5; }

}  // namespace

SuiteResult gradient_suite(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  SuiteResult r;
  r.name = "gradients";
  r.tolerance = 1e-4;
  const int seeds = opts.fast ? 3 : 10;
  json runs = json::array();
  for (int si = 0; si < seeds; ++si) {
    for (AttentionKind kind : {AttentionKind::Softmax, AttentionKind::Linear}) {
      const uint64_t seed = derive_seed(opts.seed, "grad." + std::to_string(si));
      ModelConfig c = random_tiny_config(seed);
      if (si == 0) {
        // The canonical smallest case: I=1, H=2, O=1, D=4, one layer, one head.
        c.input_dims = 1;
        c.hidden_nodes = 2;
        c.output_dims = 1;
        c.token_dim = 4;
        c.heads = 1;
        c.layers = 1;
        c.ffn_hidden = 8;
      }
      c.attention = kind;
      Rng rng(seed, "init");
      NeoMLP<double> model(c, rng);
      if (opts.inject_fault) corrupt_attention(model.params());
      const Index B = 5;
      const int signals = 2;
      ParameterStore<double> latents;
      Mat<double> bank(signals, (c.hidden_nodes + c.output_dims) * c.token_dim);
      for (int n = 0; n < signals; ++n)
        bank.row(n) = init_latents<double>(c.hidden_nodes, c.output_dims, c.token_dim, 1.0, rng).flatten();
      auto& bp = latents.add("latents", "latents", std::move(bank), true);
      const Mat<double> x = random_mat<double>(B, c.input_dims, 1.0, rng);
      const Mat<double> y = random_mat<double>(B, c.output_dims, 1.0, rng);
      Mat<double> mask = Mat<double>::Ones(B, c.output_dims);
      if (c.output_dims > 1) mask(1, 0) = 0.0;
      const std::vector<Index> rows{0, 1, 0, 1, 1};
      LossBuilder build = [&](Tape<double>& tape) {
        Var<double> z = gather_rows(tape.leaf(bp), rows);
        return masked_mse(model.forward(tape, x, z), y, mask);
      };
      std::array<ParameterStore<double>*, 2> stores{&model.params(), &latents};
      const GradCheckReport rep = check_gradients(stores, build, 1e-5, 1e-4);
      r.max_error = std::max(r.max_error, rep.max_rel_error);
      r.ok = r.ok && rep.ok();
      runs.push_back({{"seed", si},
                      {"attention", to_string(kind)},
                      {"max_rel_error", rep.max_rel_error},
                      {"ok", rep.ok()},
                      {"parameters", rep.entries.size()}});
      if (!rep.ok()) runs.back()["report"] = rep.to_json();
    }
  }
  r.details = json{{"runs", runs}, {"step", 1e-5}};
  r.seconds = since(t0);
  return r;
}

// ---- attention oracles ---------------------------------------------------

Mat<double> oracle_mix(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v, int heads,
                       AttentionKind kind) {
  const Index N = q.rows(), D = q.cols(), hd = D / heads;
  Mat<double> out = Mat<double>::Zero(N, D);
  for (int h = 0; h < heads; ++h) {
    const Index c0 = h * hd;
    if (kind == AttentionKind::Softmax) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
      for (Index i = 0; i < N; ++i) {
        std::vector<double> s(static_cast<size_t>(N));
        double mx = -1e300;
        for (Index j = 0; j < N; ++j) {
          double dot = 0.0;
          for (Index c = 0; c < hd; ++c) dot += q(i, c0 + c) * k(j, c0 + c);
          s[static_cast<size_t>(j)] = dot * scale;
          mx = std::max(mx, s[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (Index j = 0; j < N; ++j)
          for (Index c = 0; c < hd; ++c) out(i, c0 + c) += s[static_cast<size_t>(j)] / z * v(j, c0 + c);
      }
    } else {
      // rho_q: softmax over each query's features; rho_k: over the tokens of
      // each key feature. out_i = rho_q(q_i) (rho_k(K)^T V).
      Mat<double> rk(N, hd);
      for (Index c = 0; c < hd; ++c) {
        double z = 0.0;
        for (Index j = 0; j < N; ++j) z += std::exp(k(j, c0 + c));
        for (Index j = 0; j < N; ++j) rk(j, c) = std::exp(k(j, c0 + c)) / z;
      }
      for (Index i = 0; i < N; ++i) {
        std::vector<double> rq(static_cast<size_t>(hd));
        double z = 0.0;
        for (Index c = 0; c < hd; ++c) z += std::exp(q(i, c0 + c));
        for (Index c = 0; c < hd; ++c) rq[static_cast<size_t>(c)] = std::exp(q(i, c0 + c)) / z;
        for (Index e = 0; e < hd; ++e) {
          double acc = 0.0;
          for (Index c = 0; c < hd; ++c) {
            double ctx = 0.0;
            for (Index j = 0; j < N; ++j) ctx += rk(j, c) * v(j, c0 + e);
            acc += rq[static_cast<size_t>(c)] * ctx;
          }
          out(i, c0 + e) = acc;
        }
      }
    }
  }
  return out;
}

Mat<double> oracle_attention(const Mat<double>& tokens, const Mat<double>& wq, const Mat<double>& wk,
                             const Mat<double>& wv, const Mat<double>& wo, const Mat<double>& bo, int heads,
                             AttentionKind kind) {
  const Index N = tokens.rows(), D = tokens.cols();
  auto project = [&](const Mat<double>& w) {
    Mat<double> p = Mat<double>::Zero(N, D);
    for (Index i = 0; i < N; ++i)
      for (Index c = 0; c < D; ++c)
        for (Index e = 0; e < D; ++e) p(i, c) += tokens(i, e) * w(e, c);
    return p;
  };
  const Mat<double> mix = oracle_mix(project(wq), project(wk), project(wv), heads, kind);
  Mat<double> out(N, D);
  for (Index i = 0; i < N; ++i)
    for (Index c = 0; c < D; ++c) {
      double acc = bo(0, c);
      for (Index e = 0; e < D; ++e) acc += mix(i, e) * wo(e, c);
      out(i, c) = acc;
    }
  return out;
}

namespace {

double act_oracle(double x, Activation a) {
  if (a == Activation::Silu) return x / (1.0 + std::exp(-x));
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

// Straight-line forward pass of one coordinate through a backbone described
// by a name -> tensor fixture.
Mat<double> oracle_forward(const ModelConfig& c, const std::map<std::string, Mat<double>>& w, const Mat<double>& x,
                           const LatentSet<double>& z) {
  const Index I = c.input_dims, H = c.hidden_nodes, O = c.output_dims, D = c.token_dim;
  const Index N = I + H + O;
  Mat<double> out(x.rows(), O);
  for (Index b = 0; b < x.rows(); ++b) {
    Mat<double> T(N, D);
    for (Index i = 0; i < I; ++i) {
      const Mat<double>& f = w.at("encoder.rff.frequencies");
      std::vector<double> feat(static_cast<size_t>(c.d_rff));
      const Index half = c.d_rff / 2;
      for (Index j = 0; j < half; ++j) {
        if (c.use_rff) {
          const double ph = 2.0 * std::numbers::pi * f(i, j) * x(b, i);
          feat[static_cast<size_t>(j)] = std::cos(ph);
          feat[static_cast<size_t>(half + j)] = std::sin(ph);
        } else {
          for (Index s : {j, half + j})
            feat[static_cast<size_t>(s)] = x(b, i) * w.at("encoder.lift.weight")(0, s) + w.at("encoder.lift.bias")(0, s);
        }
      }
      for (Index d = 0; d < D; ++d) {
        double acc = w.at("encoder.proj.bias")(0, d) + w.at("encoder.input_embeddings")(i, d);
        for (Index j = 0; j < c.d_rff; ++j) acc += feat[static_cast<size_t>(j)] * w.at("encoder.proj.weight")(j, d);
        T(i, d) = acc;
      }
    }
    T.middleRows(I, H) = z.hidden;
    T.bottomRows(O) = z.output;
    for (int l = 0; l < c.layers; ++l) {
      auto p = [&](const char* leaf) -> const Mat<double>& { return w.at(layer_param_name(l, leaf)); };
      T += oracle_attention(T, p("attn.wq"), p("attn.wk"), p("attn.wv"), p("attn.wo"), p("attn.bo"), c.heads, c.attention);
      Mat<double> upd(N, D);
      for (Index n = 0; n < N; ++n) {
        std::vector<double> hdn(static_cast<size_t>(c.ffn_hidden));
        for (Index f = 0; f < c.ffn_hidden; ++f) {
          double acc = p("ffn.b1")(0, f);
          for (Index d = 0; d < D; ++d) acc += T(n, d) * p("ffn.w1")(d, f);
          hdn[static_cast<size_t>(f)] = act_oracle(acc, c.ffn_activation);
        }
        for (Index d = 0; d < D; ++d) {
          double acc = p("ffn.b2")(0, d);
          for (Index f = 0; f < c.ffn_hidden; ++f) acc += hdn[static_cast<size_t>(f)] * p("ffn.w2")(f, d);
          upd(n, d) = acc;
        }
      }
      T += upd;
    }
    for (Index k = 0; k < O; ++k) {
      double acc = w.at("readout.bias")(0, 0);
      for (Index d = 0; d < D; ++d) acc += T(I + H + k, d) * w.at("readout.weight")(d, 0);
      out(b, k) = acc;
    }
  }
  return out;
}

}  // namespace

SuiteResult attention_oracle_suite(const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  SuiteResult r;
  r.name = "attention_oracles";
  r.tolerance = 1e-6;
  Rng rng(opts.seed, "verify.oracle");
  double mix_err = 0.0, var_err = 0.0, pass_err = 0.0, sub_err = 0.0, model_err = 0.0;
  const int trials = opts.fast ? 5 : 20;
  for (int t = 0; t < trials; ++t) {
    for (AttentionKind kind : {AttentionKind::Softmax, AttentionKind::Linear}) {
      const int heads = t % 2 == 0 ? 1 : 2;
      const Index D = 8, N = 4, groups = 3;
      // Several independent groups in one call: each must match its own oracle.
      const Mat<double> q = random_mat<double>(groups * N, D, 2.0, rng);
      const Mat<double> k = random_mat<double>(groups * N, D, 2.0, rng);
      const Mat<double> v = random_mat<double>(groups * N, D, 2.0, rng);
      const Mat<double> got = attention_mix(q, k, v, N, heads, kind);
      for (Index g = 0; g < groups; ++g) {
        const Mat<double> want =
            oracle_mix(q.middleRows(g * N, N), k.middleRows(g * N, N), v.middleRows(g * N, N), heads, kind);
        mix_err = std::max(mix_err, (got.middleRows(g * N, N) - want).cwiseAbs().maxCoeff());
      }
      Tape<double> tape;
      const Mat<double> via_tape =
          attention_mix(tape.constant_ref(q), tape.constant_ref(k), tape.constant_ref(v), N, heads, kind).value();
      var_err = std::max(var_err, (via_tape - got).cwiseAbs().maxCoeff());
      // One token per group: attention returns the values unchanged.
      pass_err = std::max(pass_err, (attention_mix(q, k, v, 1, heads, kind) - v).cwiseAbs().maxCoeff());

      // Full sublayer with projections.
      LayerWeights<double> w;
      w.wq = random_mat<double>(D, D, 0.5, rng);
      w.wk = random_mat<double>(D, D, 0.5, rng);
      w.wv = random_mat<double>(D, D, 0.5, rng);
      w.wo = random_mat<double>(D, D, 0.5, rng);
      w.bo = random_mat<double>(1, D, 0.5, rng);
      const Mat<double> tokens = random_mat<double>(N, D, 1.0, rng);
      const Mat<double> sub = kind == AttentionKind::Softmax ? softmax_attention(tokens, w, heads)
                                                             : linear_attention(tokens, w, heads);
      sub_err = std::max(sub_err, (sub - oracle_attention(tokens, w.wq, w.wk, w.wv, w.wo, w.bo, heads, kind))
                                      .cwiseAbs()
                                      .maxCoeff());
    }
  }

  // Whole model on a 4-token configuration (I=1, H=2, O=1) against the
  // straight-line oracle, with weights captured before any fault injection.
  for (AttentionKind kind : {AttentionKind::Softmax, AttentionKind::Linear}) {
    ModelConfig c;
    c.input_dims = 1;
    c.hidden_nodes = 2;
    c.output_dims = 1;
    c.token_dim = 8;
    c.heads = 2;
    c.layers = 2;
    c.ffn_hidden = 16;
    c.d_rff = 8;
    c.rff_sigma = 1.0;
    c.attention = kind;
    Rng mrng(opts.seed, "verify.oracle.model");
    NeoMLP<double> model(c, mrng);
    std::map<std::string, Mat<double>> fixture;
    for (const auto& p : model.params()) fixture[p.name] = p.value;
    if (opts.inject_fault) corrupt_attention(model.params());
    const auto z = init_latents<double>(c.hidden_nodes, c.output_dims, c.token_dim, 1.0, mrng);
    const Mat<double> x = random_mat<double>(6, 1, 1.0, mrng);
    model_err = std::max(model_err, (model.predict(x, z) - oracle_forward(c, fixture, x, z)).cwiseAbs().maxCoeff());
  }

  r.max_error = std::max({mix_err, var_err, pass_err, sub_err, model_err});
  r.ok = r.max_error < r.tolerance;
  r.details = json{{"mix_max_abs_error", mix_err},       {"tape_vs_direct_error", var_err},
                   {"passthrough_error", pass_err},      {"sublayer_max_abs_error", sub_err},
                   {"model_forward_max_abs_error", model_err}, {"trials", trials},
                   {"fault_injected", opts.inject_fault}};
  r.seconds = since(t0);
  return r;
}

VerifyReport run_verify(const std::string& which, const VerifyOptions& opts) {
  const auto t0 = Clock::now();
  if (which != "all" && which != "symmetry" && which != "grad" && which != "oracle")
    throw ConfigError("unknown verify suite '" + which + "' (expected all, symmetry, grad or oracle)");
  VerifyReport rep;
  if (which == "all" || which == "symmetry") rep.suites.push_back(symmetry_suite(opts));
  if (which == "all" || which == "grad") rep.suites.push_back(gradient_suite(opts));
  if (which == "all" || which == "oracle") rep.suites.push_back(attention_oracle_suite(opts));
  rep.seconds = since(t0);
  return rep;
}

}  // namespace neomlp
