#include "neomlp/baseline.hpp"
#include "neomlp/error.hpp"
#include "neomlp/eval.hpp"
#include "neomlp/field.hpp"
#include "neomlp/io.hpp"
#include "neomlp/metrics.hpp"
#include "neomlp/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <unistd.h>

using namespace neomlp;
namespace fs = std::filesystem;

namespace {

Mat<float> column(std::initializer_list<float> v) {
  Mat<float> m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (float x : v) m(i++, 0) = x;
  return m;
}

ModelConfig small_image_model() {
  ModelConfig c;
  c.input_dims = 2;
  c.hidden_nodes = 2;
  c.output_dims = 1;
  c.token_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn_hidden = 16;
  c.d_rff = 16;
  c.rff_sigma = 2.0;
  return c;
}

Image gradient_image(Index n) {
  Image img = Image::zeros(n, n, 1);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) img.at(y, x, 0) = static_cast<float>(x + y) / static_cast<float>(2 * n);
  return img;
}

}  // namespace

TEST(Psnr, PerfectReconstructionIsInfinite) {
  const Mat<float> a = column({0.1f, 0.5f, 0.9f});
  EXPECT_TRUE(std::isinf(psnr(a, a, 1.0)));
  EXPECT_EQ(format_db(psnr(a, a, 1.0)), "inf");
}

TEST(Psnr, KnownValue) {
  // MSE 0.25 at peak 1: 10 log10(4).
  const Mat<float> t = column({0.0f, 0.0f}), p = column({0.5f, -0.5f});
  EXPECT_NEAR(psnr(p, t, 1.0), 6.0206, 1e-4);
  EXPECT_NEAR(psnr(p, t, 2.0), 12.0412, 1e-4);
  EXPECT_EQ(format_db(6.0206), "6.02");
}

TEST(Psnr, DoublingTheErrorCostsSixDecibels) {
  const Mat<float> t = column({0.2f, 0.4f, 0.6f, 0.8f});
  const Mat<float> e = column({0.01f, -0.02f, 0.03f, -0.01f});
  const Mat<float> p1 = t + e, p2 = t + 2.0f * e;
  EXPECT_NEAR(psnr(p1, t, 1.0) - psnr(p2, t, 1.0), 20.0 * std::log10(2.0), 1e-3);
}

TEST(Psnr, ShiftingBothSidesDoesNotChangeIt) {
  const Mat<float> t = column({0.2f, 0.4f, 0.6f}), p = column({0.25f, 0.35f, 0.65f});
  const Mat<float> ts = (t.array() + 0.125f).matrix(), ps = (p.array() + 0.125f).matrix();
  EXPECT_NEAR(psnr(p, t, 1.0), psnr(ps, ts, 1.0), 1e-4);
}

TEST(Psnr, RejectsBadInput) {
  const Mat<float> a = column({1.0f}), b = column({1.0f, 2.0f});
  EXPECT_THROW(psnr(a, b, 1.0), ConfigError);
  EXPECT_THROW(psnr(a, a, 0.0), ConfigError);
}

TEST(Psnr, MaskedEntriesAreIgnored) {
  Mat<float> t(2, 2), p(2, 2), m(2, 2);
  t << 0, 0, 0, 0;
  p << 0.5f, 100.0f, -0.5f, -100.0f;
  m << 1, 0, 1, 0;
  EXPECT_NEAR(masked_psnr(p, t, m, 1.0), 6.0206, 1e-4);
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(iou(std::vector<uint8_t>{1, 1, 0, 0}, std::vector<uint8_t>{1, 0, 0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(iou(std::vector<uint8_t>{0, 1, 1, 0}, std::vector<uint8_t>{0, 1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(iou(std::vector<uint8_t>{0, 0, 0}, std::vector<uint8_t>{0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(iou(std::vector<uint8_t>{1, 0}, std::vector<uint8_t>{0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(iou(column({0.9f, 0.6f, 0.2f}), column({1.0f, 0.0f, 0.0f})), 0.5);
}

TEST(Iou, MatchesSetCounting) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 16 * 16 * 16;
    std::vector<uint8_t> a(n), b(n);
    std::set<Index> sa, sb;
    const double pa = rng.uniform(0.05, 0.6), pb = rng.uniform(0.05, 0.6);
    for (Index i = 0; i < n; ++i) {
      a[i] = rng.uniform(0, 1) < pa;
      b[i] = rng.uniform(0, 1) < pb;
      if (a[i]) sa.insert(i);
      if (b[i]) sb.insert(i);
    }
    std::set<Index> inter, uni = sa;
    for (Index i : sb) {
      if (sa.count(i)) inter.insert(i);
      uni.insert(i);
    }
    const double expect = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    EXPECT_DOUBLE_EQ(iou(a, b), expect);
    EXPECT_DOUBLE_EQ(iou(b, a), expect);
  }
}

TEST(Evaluate, ReportsPerSignalMetrics) {
  SignalDataset ds = ingest_image(gradient_image(4), "a");
  ds.append(ingest_image(gradient_image(4), "b"));
  Mat<float> pred = ds.targets;
  pred.bottomRows(16).array() += 0.5f;
  const MetricReport r = evaluate(ds, pred);
  ASSERT_EQ(r.signals.size(), 2u);
  EXPECT_TRUE(std::isinf(r.signals[0].psnr));
  EXPECT_NEAR(r.signals[1].psnr, 6.0206, 1e-4);
  EXPECT_TRUE(std::isinf(r.mean_psnr));
  EXPECT_EQ(r.points, 32);
  EXPECT_EQ(r.to_json().at("signals").size(), 2u);
}

TEST(Evaluate, VoxelSignalsCarryIou) {
  const SignalDataset ds = ingest_voxel(sphere_voxels(8, 0.3), "ball");
  const MetricReport r = evaluate(ds, ds.targets);
  ASSERT_TRUE(r.signals[0].iou.has_value());
  EXPECT_DOUBLE_EQ(*r.signals[0].iou, 1.0);
  ASSERT_TRUE(r.mean_iou.has_value());
}

TEST(Reconstruct, AgreesWithFinetuneTelemetry) {
  // With a vanishing learning rate the latents do not move during the last
  // epoch, and B divides P, so the epoch's mean batch loss is the MSE of the
  // returned latents.
  const SignalDataset ds = ingest_image(gradient_image(8), "g");
  Rng rng(4);
  const NeoMLP<float> model(small_image_model(), rng);
  FitConfig f;
  f.epochs = 2;
  f.batch_points = 16;
  f.lr = 1e-12;
  const FitResult r = finetune(ds, model, f);
  const Mat<float> values = reconstruct(model, r.latents[0], ds.signals[0]);
  EXPECT_NEAR(psnr(values, ds.targets, 1.0), r.history.back().psnr, 1e-3);
  const MetricReport rep = evaluate(ds, predict_dataset(model, ds, r.latents));
  EXPECT_NEAR(rep.mean_psnr, r.history.back().psnr, 1e-3);
}

TEST(Reconstruct, ZeroLayerFieldIsConstant) {
  ModelConfig cfg = small_image_model();
  cfg.layers = 0;
  Rng rng(5);
  const NeoMLP<float> model(cfg, rng);
  const SignalDataset ds = ingest_image(gradient_image(6), "g");
  const auto z = init_signal_latents(ds, cfg, rng);
  const Mat<float> v = reconstruct(model, z[0], ds.signals[0]);
  EXPECT_EQ(v.rows(), 36);
  EXPECT_LT((v.array() - v(0, 0)).abs().maxCoeff(), 1e-7f);
}

TEST(Reconstruct, UpsampledGridHasFactorSquaredPixels) {
  const SignalDataset ds = ingest_image(gradient_image(5), "g");
  Rng rng(6);
  const NeoMLP<float> model(small_image_model(), rng);
  const auto z = init_signal_latents(ds, small_image_model(), rng);
  const Mat<float> v = reconstruct(model, z[0], ds.signals[0], 2);
  EXPECT_EQ(v.rows(), 4 * 25);
  const SignalInfo up = upsampled_info(ds.signals[0], 2);
  EXPECT_EQ(up.count, 100);
  EXPECT_EQ(up.shape[0], 10);
  EXPECT_EQ(upsampled_grid(ds.signals[0], 2).rows(), 100);
}

TEST(Baselines, SirenInitialisationAndSize) {
  BaselineConfig cfg;
  EXPECT_EQ(cfg.parameter_count(), 198145);
  const BaselineField siren = build_baseline(cfg, 1);
  long total = 0;
  for (const auto& p : siren.params()) total += static_cast<long>(p.value.size());
  EXPECT_EQ(total, 198145);
  EXPECT_LE(siren.params().at("layers.0.weight").value.cwiseAbs().maxCoeff(), 1.0f);
  const float later = static_cast<float>(std::sqrt(6.0 / 256.0) / 30.0);
  EXPECT_LE(siren.params().at("layers.2.weight").value.cwiseAbs().maxCoeff(), later);
  EXPECT_GT(siren.params().at("layers.2.weight").value.cwiseAbs().maxCoeff(), 0.9f * later);
}

TEST(Baselines, RffNetWithZeroBandwidthIsConstant) {
  BaselineConfig cfg;
  cfg.kind = BaselineKind::RFFNet;
  cfg.input_dims = 2;
  cfg.width = 32;
  cfg.layers = 3;
  cfg.d_rff = 16;
  cfg.rff_sigma = 0.0;
  const BaselineField net = build_baseline(cfg, 2);
  const SignalDataset ds = ingest_image(gradient_image(6), "g");
  const Mat<float> v = reconstruct(net, ds.signals[0]);
  EXPECT_LT((v.array() - v(0, 0)).abs().maxCoeff(), 1e-6f);
}

TEST(Baselines, FitReducesLoss) {
  BaselineConfig cfg;
  cfg.kind = BaselineKind::RFFNet;
  cfg.input_dims = 2;
  cfg.width = 32;
  cfg.layers = 3;
  cfg.d_rff = 32;
  cfg.rff_sigma = 1.0;
  BaselineField net = build_baseline(cfg, 3);
  const SignalDataset ds = ingest_image(gradient_image(8), "g");
  FitConfig f;
  f.epochs = 100;
  f.batch_points = 32;
  f.lr = 1e-3;
  const FitResult r = fit_baseline(ds, net, f);
  EXPECT_LT(r.history.back().loss, 0.2 * r.history.front().loss);
}

TEST(WriteReconstruction, ProducesViewableFiles) {
  const fs::path dir = fs::temp_directory_path() / ("neomlp_eval_" + std::to_string(::getpid()));
  const SignalDataset img = ingest_image(gradient_image(4), "pic");
  const auto paths = write_reconstruction(dir, img.signals[0], img.targets);
  bool png = false;
  for (const auto& p : paths) {
    EXPECT_TRUE(fs::exists(p)) << p;
    png = png || p.extension() == ".png";
  }
  EXPECT_TRUE(png);
  const Image back = read_png(dir / "pic.png");
  EXPECT_EQ(back.width, 4);

  AudioClip clip = synth_tones({{440.0, 0.5, 0.0}}, 800.0, 0.1);
  const SignalDataset au = ingest_audio(clip, 100.0, "tone");
  const auto wavs = write_reconstruction(dir, au.signals[0], au.targets);
  EXPECT_GE(wavs.size(), 2u);
  for (const auto& p : wavs) EXPECT_TRUE(fs::exists(p)) << p;
  std::error_code ec;
  fs::remove_all(dir, ec);
}
