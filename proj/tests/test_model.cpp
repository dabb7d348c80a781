#include "neomlp/attention.hpp"
#include "neomlp/encoding.hpp"
#include "neomlp/error.hpp"
#include "neomlp/model.hpp"
#include "neomlp/store.hpp"
#include "neomlp/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace neomlp;

namespace {

Mat<double> random_mat(Index r, Index c, Rng& rng, double sd = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

ModelConfig tiny(int I, int H, int O, int D, int L, int heads, AttentionKind kind) {
  ModelConfig c;
  c.input_dims = I;
  c.hidden_nodes = H;
  c.output_dims = O;
  c.token_dim = D;
  c.layers = L;
  c.heads = heads;
  c.ffn_hidden = 2 * D;
  c.d_rff = 8;
  c.rff_sigma = 1.0;
  c.attention = kind;
  c.latent_variance = 1.0;
  return c;
}

// Dense single-head softmax mix with the full N x N matrix.
Mat<double> dense_softmax(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v) {
  const Index N = q.rows(), D = q.cols();
  Mat<double> out = Mat<double>::Zero(N, v.cols());
  for (Index i = 0; i < N; ++i) {
    std::vector<double> a(static_cast<size_t>(N));
    double mx = -1e300, z = 0.0;
    for (Index j = 0; j < N; ++j) {
      double s = 0.0;
      for (Index d = 0; d < D; ++d) s += q(i, d) * k(j, d);
      a[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(D));
      mx = std::max(mx, a[static_cast<size_t>(j)]);
    }
    for (auto& x : a) z += (x = std::exp(x - mx));
    for (Index j = 0; j < N; ++j)
      for (Index d = 0; d < v.cols(); ++d) out(i, d) += a[static_cast<size_t>(j)] / z * v(j, d);
  }
  return out;
}

// Dense single-head linear mix: rho_q over features, rho_k over tokens.
Mat<double> dense_linear(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v) {
  const Index N = q.rows(), D = q.cols();
  Mat<double> rq(N, D), rk(N, D);
  for (Index i = 0; i < N; ++i) {
    double z = 0.0;
    for (Index d = 0; d < D; ++d) z += std::exp(q(i, d));
    for (Index d = 0; d < D; ++d) rq(i, d) = std::exp(q(i, d)) / z;
  }
  for (Index d = 0; d < D; ++d) {
    double z = 0.0;
    for (Index j = 0; j < N; ++j) z += std::exp(k(j, d));
    for (Index j = 0; j < N; ++j) rk(j, d) = std::exp(k(j, d)) / z;
  }
  Mat<double> kv = Mat<double>::Zero(D, v.cols());
  for (Index a = 0; a < D; ++a)
    for (Index b = 0; b < v.cols(); ++b)
      for (Index j = 0; j < N; ++j) kv(a, b) += rk(j, a) * v(j, b);
  Mat<double> out = Mat<double>::Zero(N, v.cols());
  for (Index i = 0; i < N; ++i)
    for (Index b = 0; b < v.cols(); ++b)
      for (Index a = 0; a < D; ++a) out(i, b) += rq(i, a) * kv(a, b);
  return out;
}

}  // namespace

// ---- encoding ---------------------------------------------------------------

TEST(Rff, ZeroCoordinate) {
  Rng rng(1);
  const auto bank = sample_rff_bank<double>(1, 16, 5.0, rng);
  const RowVec<double> f = rff_encode(0.0, bank);
  ASSERT_EQ(f.size(), 16);
  for (Index i = 0; i < 8; ++i) {
    EXPECT_EQ(f(i), 1.0);
    EXPECT_EQ(f(8 + i), 0.0);
  }
}

TEST(Rff, PythagoreanPairs) {
  Rng rng(2);
  const auto bank = sample_rff_bank<double>(1, 64, 20.0, rng);
  for (double x : {-100.0, -3.7, 0.25, 42.0}) {
    const RowVec<double> f = rff_encode(x, bank);
    EXPECT_NEAR(f.squaredNorm(), 32.0, 1e-12) << x;
  }
}

TEST(Rff, SingleQuarterFrequency) {
  RFFBank<double> bank;
  bank.frequencies = Mat<double>::Constant(1, 1, 0.25);
  const RowVec<double> f = rff_encode(1.0, bank);
  EXPECT_NEAR(f(0), 0.0, 1e-12);
  EXPECT_NEAR(f(1), 1.0, 1e-12);
}

TEST(Rff, RejectsNonFiniteCoordinates) {
  Rng rng(3);
  const auto bank = sample_rff_bank<double>(1, 4, 1.0, rng);
  EXPECT_THROW(rff_encode(std::nan(""), bank), InputDomainError);
}

TEST(Rff, LargeCoordinatesKeepDoublePrecisionPhases) {
  RFFBank<float> bank;
  bank.frequencies = Mat<float>::Constant(1, 1, 0.1f);
  const RowVec<float> f = rff_encode(100.0f, bank);
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(0.1f) * 100.0;
  EXPECT_NEAR(f(0), std::cos(phase), 1e-6);
  EXPECT_NEAR(f(1), std::sin(phase), 1e-6);
}

TEST(EncodeInput, ZeroProjectionGivesTheEmbedding) {
  Rng rng(4);
  ModelConfig cfg = tiny(1, 1, 1, 4, 1, 1, AttentionKind::Linear);
  InputEncoder<double> enc = InputEncoder<double>::init(cfg, rng);
  enc.proj_weight.setZero();
  enc.proj_bias.setZero();
  const Mat<double> tokens = encode_input(Mat<double>(Mat<double>::Constant(1, 1, 0.3)), enc);
  EXPECT_TRUE(tokens.row(0) == enc.embeddings.row(0));
}

TEST(EncodeInput, EmbeddingsBreakInputSymmetry) {
  Rng rng(5);
  ModelConfig cfg = tiny(2, 1, 1, 4, 1, 1, AttentionKind::Linear);
  const InputEncoder<double> enc = InputEncoder<double>::init(cfg, rng);
  Mat<double> a(1, 2), b(1, 2);
  a << 0.2, -0.6;
  b << -0.6, 0.2;
  const Mat<double> ta = encode_input(a, enc), tb = encode_input(b, enc);
  EXPECT_GT((ta - tb).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(EncodeInput, TwoFrequencyScalarOracle) {
  InputEncoder<double> enc;
  enc.bank.frequencies.resize(2, 2);
  enc.bank.frequencies << 0.5, 1.5, -0.25, 2.0;
  enc.proj_weight.resize(4, 3);
  enc.proj_weight << 1, 0, 0.5, 0, 1, -0.5, 0.25, 0, 1, 0, -1, 2;
  enc.proj_bias.resize(1, 3);
  enc.proj_bias << 0.1, 0.2, 0.3;
  enc.embeddings.resize(2, 3);
  enc.embeddings << 1, 2, 3, -1, -2, -3;
  Mat<double> x(1, 2);
  x << 0.3, -0.7;
  const Mat<double> t = encode_input(x, enc);
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index i = 0; i < 2; ++i) {
    const double f[4] = {std::cos(two_pi * enc.bank.frequencies(i, 0) * x(0, i)),
                         std::cos(two_pi * enc.bank.frequencies(i, 1) * x(0, i)),
                         std::sin(two_pi * enc.bank.frequencies(i, 0) * x(0, i)),
                         std::sin(two_pi * enc.bank.frequencies(i, 1) * x(0, i))};
    for (Index d = 0; d < 3; ++d) {
      double expect = enc.proj_bias(0, d) + enc.embeddings(i, d);
      for (Index k = 0; k < 4; ++k) expect += f[k] * enc.proj_weight(k, d);
      EXPECT_NEAR(t(i, d), expect, 1e-12) << i << "," << d;
    }
  }
  // Independently evaluated reference values.
  EXPECT_NEAR(t(0, 0), 1.8900395008862, 1e-12);
  EXPECT_NEAR(t(1, 2), -2.3530602333393, 1e-12);
}

TEST(Embeddings, ZeroVariance) {
  Rng rng(6);
  EXPECT_TRUE((init_input_embeddings<double>(3, 8, 0.0, rng).array() == 0.0).all());
}

TEST(Embeddings, EmpiricalVariance) {
  Rng rng(7);
  const Mat<double> e = init_input_embeddings<double>(100, 100, 1.0, rng);
  const double mean = e.mean();
  const double var = (e.array() - mean).square().sum() / static_cast<double>(e.size() - 1);
  EXPECT_GT(var, 0.9);
  EXPECT_LT(var, 1.1);
}

TEST(Embeddings, SameSeedSameValues) {
  Rng a(8, "init"), b(8, "init");
  EXPECT_TRUE(init_input_embeddings<float>(2, 16, 1.0, a) == init_input_embeddings<float>(2, 16, 1.0, b));
}

// ---- tokens and attention ---------------------------------------------------

TEST(Tokens, LayoutAndRoundTrip) {
  Mat<double> inputs(1, 2);
  inputs << 1, 2;
  LatentSet<double> z;
  z.hidden.resize(1, 2);
  z.hidden << 3, 4;
  z.output.resize(1, 2);
  z.output << 5, 6;
  const Mat<double> t = assemble_tokens(inputs, z);
  ASSERT_EQ(t.rows(), 3);
  EXPECT_EQ(t(0, 1), 2);
  EXPECT_EQ(t(1, 0), 3);
  EXPECT_EQ(t(2, 1), 6);
  const auto blocks = split_tokens(t, 1, 1, 1);
  EXPECT_TRUE(blocks.inputs == inputs);
  EXPECT_TRUE(blocks.hidden == z.hidden);
  EXPECT_TRUE(blocks.output == z.output);
}

TEST(Tokens, EmptyHiddenBlock) {
  LatentSet<double> z;
  z.hidden.resize(0, 2);
  z.output = Mat<double>::Ones(2, 2);
  EXPECT_EQ(assemble_tokens(Mat<double>(Mat<double>::Zero(1, 2)), z).rows(), 3);
}

TEST(Attention, SingleTokenPassesValuesThrough) {
  Rng rng(9);
  const Mat<double> q = random_mat(1, 4, rng), k = random_mat(1, 4, rng), v = random_mat(1, 4, rng);
  for (auto kind : {AttentionKind::Softmax, AttentionKind::Linear})
    EXPECT_LT((attention_mix(q, k, v, 1, 2, kind) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  // With V = I, the mix is the attention matrix itself.
  Rng rng(10);
  const Mat<double> q = random_mat(4, 4, rng, 3.0), k = random_mat(4, 4, rng, 3.0);
  const Mat<double> a = attention_mix<double>(q, k, Mat<double>::Identity(4, 4), 4, 1, AttentionKind::Softmax);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
}

TEST(Attention, LinearKeyColumnsSumToOne) {
  // rho_q rows and rho_k columns are distributions, so a constant V maps to
  // itself.
  Rng rng(11);
  const Mat<double> q = random_mat(5, 4, rng, 2.0), k = random_mat(5, 4, rng, 2.0);
  const Mat<double> out = attention_mix<double>(q, k, Mat<double>::Ones(5, 4), 5, 1, AttentionKind::Linear);
  EXPECT_LT((out.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Attention, SoftmaxMatchesDenseOracle) {
  Rng rng(12);
  const Mat<double> q = random_mat(3, 4, rng), k = random_mat(3, 4, rng), v = random_mat(3, 4, rng);
  EXPECT_LT((attention_mix(q, k, v, 3, 1, AttentionKind::Softmax) - dense_softmax(q, k, v)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Attention, LinearMatchesDenseOracle) {
  Rng rng(13);
  const Mat<double> q = random_mat(4, 4, rng), k = random_mat(4, 4, rng), v = random_mat(4, 4, rng);
  EXPECT_LT((attention_mix(q, k, v, 4, 1, AttentionKind::Linear) - dense_linear(q, k, v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, HeadsAndGroupsAreIndependent) {
  Rng rng(14);
  const Mat<double> q = random_mat(8, 4, rng), k = random_mat(8, 4, rng), v = random_mat(8, 4, rng);
  for (auto kind : {AttentionKind::Softmax, AttentionKind::Linear}) {
    const Mat<double> mixed = attention_mix(q, k, v, 4, 2, kind);
    for (Index g = 0; g < 2; ++g)
      for (Index h = 0; h < 2; ++h) {
        const Mat<double> qs = q.block(4 * g, 2 * h, 4, 2), ks = k.block(4 * g, 2 * h, 4, 2), vs = v.block(4 * g, 2 * h, 4, 2);
        const Mat<double> ref = kind == AttentionKind::Softmax ? dense_softmax(qs, ks, vs) : dense_linear(qs, ks, vs);
        EXPECT_LT((Mat<double>(mixed.block(4 * g, 2 * h, 4, 2)) - ref).cwiseAbs().maxCoeff(), 1e-12);
      }
  }
}

TEST(Attention, OracleSuitePasses) {
  const SuiteResult r = attention_oracle_suite({});
  EXPECT_TRUE(r.ok) << r.details.dump();
}

// ---- layers and the full model ----------------------------------------------

LayerWeights<double> random_layer(Index D, Index F, Rng& rng) {
  LayerWeights<double> w;
  w.wq = random_mat(D, D, rng, 0.5);
  w.wk = random_mat(D, D, rng, 0.5);
  w.wv = random_mat(D, D, rng, 0.5);
  w.wo = random_mat(D, D, rng, 0.5);
  w.bo = random_mat(1, D, rng, 0.1);
  w.w1 = random_mat(D, F, rng, 0.5);
  w.b1 = random_mat(1, F, rng, 0.1);
  w.w2 = random_mat(F, D, rng, 0.5);
  w.b2 = random_mat(1, D, rng, 0.1);
  return w;
}

TEST(Layer, ZeroOutputWeightsGiveIdentity) {
  Rng rng(15);
  LayerWeights<double> w = random_layer(4, 8, rng);
  w.wo.setZero();
  w.bo.setZero();
  w.w2.setZero();
  w.b2.setZero();
  const Mat<double> t = random_mat(3, 4, rng);
  for (auto kind : {AttentionKind::Softmax, AttentionKind::Linear})
    EXPECT_TRUE(neomlp_layer(t, w, 1, kind, Activation::Silu) == t);
}

TEST(Layer, FeedForwardIsPerToken) {
  Rng rng(16);
  const LayerWeights<double> w = random_layer(4, 8, rng);
  Mat<double> t = random_mat(3, 4, rng);
  const Mat<double> before = feed_forward(t, w, Activation::Gelu);
  t(1, 2) += 0.5;
  const Mat<double> after = feed_forward(t, w, Activation::Gelu);
  EXPECT_TRUE(before.row(0) == after.row(0));
  EXPECT_TRUE(before.row(2) == after.row(2));
  EXPECT_FALSE(before.row(1) == after.row(1));
}

TEST(Layer, ComposesTheTwoSubSteps) {
  Rng rng(17);
  const LayerWeights<double> w = random_layer(4, 8, rng);
  const Mat<double> t = random_mat(3, 4, rng);
  const Mat<double> t1 = t + softmax_attention(t, w, 1);
  const Mat<double> ref = t1 + feed_forward(t1, w, Activation::Silu);
  EXPECT_LT((neomlp_layer(t, w, 1, AttentionKind::Softmax, Activation::Silu) - ref).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Model, AudioScaleParameterCount) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.parameter_count(), 182017);
  Rng rng(0, "init");
  const NeoMLP<float> model(cfg, rng);
  EXPECT_EQ(static_cast<long>(model.params().num_trainable_scalars()) + (cfg.hidden_nodes + cfg.output_dims) * cfg.token_dim,
            182017);
}

TEST(Model, NoLayersReadsOutTheOutputEmbeddings) {
  ModelConfig cfg = tiny(1, 2, 2, 4, 0, 1, AttentionKind::Linear);
  Rng rng(18);
  const NeoMLP<double> model(cfg, rng);
  const LatentSet<double> z = init_latents<double>(2, 2, 4, 1.0, rng);
  Mat<double> x(3, 1);
  x << -50, 0.1, 80;
  const Mat<double> y = model.predict(x, z);
  const auto [w, b] = model.readout();
  for (Index o = 0; o < 2; ++o) {
    const double expect = (z.output.row(o) * w)(0, 0) + b(0, 0);
    for (Index r = 0; r < 3; ++r) EXPECT_NEAR(y(r, o), expect, 1e-14);
  }
}

TEST(Model, BatchMatchesPerPointEvaluation) {
  ModelConfig cfg = tiny(2, 3, 1, 8, 2, 2, AttentionKind::Softmax);
  Rng rng(19);
  const NeoMLP<float> model(cfg, rng);
  const LatentSet<float> z = init_latents<float>(3, 1, 8, 1.0, rng);
  Mat<float> x(6, 2);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  const Mat<float> batch = model.predict(x, z);
  for (Index r = 0; r < 6; ++r) {
    const Mat<float> one = model.predict(x.row(r), z);
    EXPECT_NEAR(one(0, 0), batch(r, 0), 1e-6f) << r;
  }
}

TEST(Model, HiddenPermutationInvariance) {
  for (auto kind : {AttentionKind::Softmax, AttentionKind::Linear}) {
    ModelConfig cfg = tiny(2, 4, 2, 8, 2, 2, kind);
    Rng rng(20);
    const NeoMLP<double> model(cfg, rng);
    const LatentSet<double> z = init_latents<double>(4, 2, 8, 1.0, rng);
    const Mat<double> x = random_mat(5, 2, rng);
    const Mat<double> y = model.predict(x, z);
    LatentSet<double> zp = z;
    const int perm[4] = {2, 0, 3, 1};
    for (Index j = 0; j < 4; ++j) zp.hidden.row(j) = z.hidden.row(perm[j]);
    EXPECT_LT((model.predict(x, zp) - y).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Model, OutputPermutationEquivariance) {
  ModelConfig cfg = tiny(1, 2, 3, 4, 2, 1, AttentionKind::Linear);
  Rng rng(21);
  const NeoMLP<double> model(cfg, rng);
  LatentSet<double> z = init_latents<double>(2, 3, 4, 1.0, rng);
  const Mat<double> x = random_mat(4, 1, rng);
  const Mat<double> y = model.predict(x, z);
  LatentSet<double> zp = z;
  zp.output.row(0) = z.output.row(2);
  zp.output.row(2) = z.output.row(0);
  const Mat<double> yp = model.predict(x, zp);
  EXPECT_LT((yp.col(0) - y.col(2)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((yp.col(2) - y.col(0)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((yp.col(1) - y.col(1)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Model, SymmetrySuitePasses) {
  VerifyOptions opts;
  opts.fast = true;
  const SuiteResult r = symmetry_suite(opts);
  EXPECT_TRUE(r.ok) << r.details.dump();
}

TEST(Latents, ZeroVarianceAndEmpiricalVariance) {
  Rng rng(22);
  const LatentSet<double> zero = init_latents<double>(3, 1, 8, 0.0, rng);
  EXPECT_TRUE((zero.hidden.array() == 0.0).all() && (zero.output.array() == 0.0).all());
  const LatentSet<double> z = init_latents<double>(99, 1, 100, 1e-3, rng);
  Mat<double> all(100, 100);
  all << z.hidden, z.output;
  const double var = (all.array() - all.mean()).square().sum() / static_cast<double>(all.size() - 1);
  EXPECT_GT(var, 0.9e-3);
  EXPECT_LT(var, 1.1e-3);
}

TEST(Latents, DistinctSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_FALSE(init_latents<float>(4, 1, 8, 1e-3, a).hidden == init_latents<float>(4, 1, 8, 1e-3, b).hidden);
}

TEST(Latents, FlattenRoundTrip) {
  Rng rng(23);
  const LatentSet<float> z = init_latents<float>(3, 2, 4, 1.0, rng);
  const LatentSet<float> back = LatentSet<float>::unflatten(z.flatten(), 3, 2, 4);
  EXPECT_TRUE(back.hidden == z.hidden);
  EXPECT_TRUE(back.output == z.output);
}

TEST(Config, ValidationRejectsBadHeads) {
  ModelConfig cfg;
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  ModelConfig cfg = tiny(3, 5, 2, 16, 2, 4, AttentionKind::Softmax);
  cfg.use_rff = false;
  const nlohmann::json j = cfg;
  const ModelConfig back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.hidden_nodes, 5);
}
