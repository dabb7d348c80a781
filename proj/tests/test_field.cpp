#include "neomlp/error.hpp"
#include "neomlp/field.hpp"
#include "neomlp/metrics.hpp"
#include "neomlp/store.hpp"
#include "neomlp/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

using namespace neomlp;

namespace {

ModelConfig tiny_image_model() {
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

SignalDataset constant_images(int count, Index size, float value) {
  SignalDataset ds;
  for (int i = 0; i < count; ++i) {
    Image img = Image::zeros(size, size, 1);
    std::fill(img.data.begin(), img.data.end(), value + 0.1f * static_cast<float>(i));
    ds.append(ingest_image(img, "c" + std::to_string(i)));
  }
  return ds;
}

}  // namespace

TEST(Sampling, SinglePointIsRepeated) {
  const SignalDataset ds = constant_images(1, 1, 0.5f);
  Rng rng(1);
  const PointBatch b = sample_fit_batch(ds, 3, rng);
  ASSERT_EQ(b.size(), 3);
  EXPECT_TRUE((b.coords.array() == b.coords(0, 0)).all());
  EXPECT_EQ(b.signal, (std::vector<Index>{0, 0, 0}));
}

TEST(Sampling, UniformOverSignals) {
  const Index per = 7;
  std::vector<long> hits(10, 0);
  Rng rng(2);
  const auto idx = sample_fit_indices(10 * per, 100000, rng);
  for (Index p : idx) ++hits[static_cast<size_t>(p / per)];
  for (long h : hits) EXPECT_NEAR(static_cast<double>(h) / 100000.0, 0.1, 0.005);  // about five standard deviations
}

TEST(Sampling, SeededSequenceRepeats) {
  Rng a(3, "sampling"), b(3, "sampling");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(sample_fit_indices(1000, 64, a), sample_fit_indices(1000, 64, b));
}

TEST(Sampling, FinetunePartition) {
  Rng rng(4);
  const auto parts = sample_finetune_partition(10, 3, rng);
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[0].size(), 3u);
  EXPECT_EQ(parts[3].size(), 1u);
  std::vector<Index> all;
  for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  std::sort(all.begin(), all.end());
  std::vector<Index> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
}

TEST(Sampling, DifferentSeedsReorderTheSameMultiset) {
  Rng a(5), b(6);
  auto flat = [](const std::vector<std::vector<Index>>& parts) {
    std::vector<Index> v;
    for (const auto& p : parts) v.insert(v.end(), p.begin(), p.end());
    return v;
  };
  auto x = flat(sample_finetune_partition(50, 8, a)), y = flat(sample_finetune_partition(50, 8, b));
  EXPECT_NE(x, y);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  EXPECT_EQ(x, y);
}

TEST(Sampling, IterationCounts) {
  EXPECT_EQ(iterations_per_epoch(10, 3, 1.0, Sampling::WithoutReplacement), 4);
  EXPECT_EQ(iterations_per_epoch(10, 3, 1.0, Sampling::WithReplacement), 3);
  EXPECT_EQ(iterations_per_epoch(784 * 5, 256, 1.0, Sampling::WithoutReplacement), 16);
  EXPECT_EQ(iterations_per_epoch(1000, 100, 0.5, Sampling::WithReplacement), 5);
  EXPECT_EQ(iterations_per_epoch(2, 3, 1.0, Sampling::WithReplacement), 0);
}

TEST(Sampling, FinetuneEpochCoversEveryPointOnce) {
  const SignalDataset ds = constant_images(3, 2, 0.2f);
  Rng rng(7);
  const auto batches = sample_finetune_epoch(ds, 5, rng);
  ASSERT_EQ(batches.size(), 3u);
  std::vector<int> per_signal(3, 0);
  for (const auto& b : batches)
    for (Index s : b.signal) ++per_signal[static_cast<size_t>(s)];
  EXPECT_EQ(per_signal, (std::vector<int>{4, 4, 4}));
}

TEST(MaskedMse, Examples) {
  Tape<double> tape;
  Mat<double> pred(1, 2), target(1, 2), mask(1, 2);
  pred << 1.0, 7.0;
  target << 0.0, 0.0;
  mask << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(masked_mse(tape.constant(pred), target, mask).value()(0, 0), 1.0);
  mask.setOnes();
  EXPECT_DOUBLE_EQ(masked_mse(tape.constant(pred), pred, mask).value()(0, 0), 0.0);
}

TEST(MaskedMse, MatchesScalarLoop) {
  Rng rng(8);
  Mat<double> pred(4, 3), target(4, 3), mask(4, 3);
  for (Index i = 0; i < 12; ++i) {
    pred.data()[i] = rng.normal();
    target.data()[i] = rng.normal();
    mask.data()[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
  }
  mask(0, 0) = 1.0;
  double num = 0.0, den = 0.0;
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 3; ++c)
      if (mask(r, c) != 0.0) {
        num += (pred(r, c) - target(r, c)) * (pred(r, c) - target(r, c));
        den += 1.0;
      }
  Tape<double> tape;
  EXPECT_NEAR(masked_mse(tape.constant(pred), target, mask).value()(0, 0), num / den, 1e-12);
}

TEST(MaskedMse, MaskedEntriesGetNoGradient) {
  ParameterStore<double> st;
  auto& p = st.add("pred", "g", Mat<double>::Constant(3, 2, 0.5));
  Mat<double> target = Mat<double>::Zero(3, 2), mask = Mat<double>::Ones(3, 2);
  mask(1, 0) = mask(2, 1) = 0.0;
  Tape<double> tape;
  tape.backward(masked_mse(tape.leaf(p), target, mask));
  EXPECT_EQ(p.grad(1, 0), 0.0);
  EXPECT_EQ(p.grad(2, 1), 0.0);
  EXPECT_NE(p.grad(0, 0), 0.0);
}

TEST(FitConfig, CosineScheduleAndJson) {
  FitConfig f;
  f.lr = 1e-2;
  f.schedule = LrSchedule::Cosine;
  f.lr_final_factor = 0.1;
  EXPECT_DOUBLE_EQ(f.lr_at(0, 100), 1e-2);
  EXPECT_NEAR(f.lr_at(99, 100), 1e-3, 1e-12);
  EXPECT_NEAR(f.lr_at(50, 101), 5.5e-3, 1e-12);
  const FitConfig back = nlohmann::json(f).get<FitConfig>();
  EXPECT_EQ(back.schedule, LrSchedule::Cosine);
  EXPECT_EQ(back.lr_final_factor, 0.1);
  f.lr_hook = [](long step, long) { return step < 10 ? 1.0 : 2.0; };
  EXPECT_EQ(f.lr_at(11, 100), 2.0);
  const nlohmann::json hooked = f;
  EXPECT_EQ(hooked.at("lr_schedule"), "custom");
  EXPECT_EQ(hooked.get<FitConfig>().schedule, LrSchedule::Constant);
  FitConfig bad;
  bad.batch_points = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Fit, ZeroEpochsLeavesTheInitialisation) {
  const SignalDataset ds = constant_images(1, 4, 0.3f);
  Rng rng(9);
  NeoMLP<float> model(tiny_image_model(), rng);
  const Digest before = parameter_checksum(model.params());
  FitConfig f;
  f.epochs = 0;
  const FitResult r = fit(ds, model, f);
  EXPECT_EQ(r.steps, 0);
  EXPECT_EQ(parameter_checksum(model.params()), before);
  EXPECT_TRUE(model.params().is_frozen("backbone"));
}

TEST(Fit, ConstantImageConverges) {
  const SignalDataset ds = constant_images(1, 8, 0.7f);
  Rng rng(10);
  NeoMLP<float> model(tiny_image_model(), rng);
  FitConfig f;
  f.epochs = 200;
  f.batch_points = 64;
  f.lr = 5e-3;
  const FitResult r = fit(ds, model, f);
  ASSERT_EQ(r.steps, 200);
  EXPECT_LT(r.history.back().loss * 10.0, r.history.front().loss);
}

TEST(Fit, SerialRunsAreBitwiseIdentical) {
  const SignalDataset ds = constant_images(2, 6, 0.2f);
  auto run = [&] {
    Rng rng(11, "init");
    NeoMLP<float> model(tiny_image_model(), rng);
    FitConfig f;
    f.epochs = 3;
    f.batch_points = 16;
    f.seed = 4;
    const FitResult r = fit(ds, model, f);
    return std::pair{parameter_checksum(model.params()), latent_bank(r.latents)};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(a.second == b.second);
}

TEST(Fit, TelemetryAndMetricsFile) {
  const auto path = std::filesystem::temp_directory_path() / ("neomlp_metrics_" + std::to_string(::getpid()) + ".jsonl");
  std::filesystem::remove(path);
  const SignalDataset ds = constant_images(1, 4, 0.5f);
  Rng rng(12);
  NeoMLP<float> model(tiny_image_model(), rng);
  std::ostringstream log;
  FitConfig f;
  f.epochs = 3;
  f.batch_points = 8;
  f.metrics_path = path;
  f.log = &log;
  int callbacks = 0;
  f.on_epoch = [&](const EpochStats& s) { EXPECT_EQ(s.epoch, ++callbacks); };
  fit(ds, model, f);
  EXPECT_EQ(callbacks, 3);
  EXPECT_NE(log.str().find("epoch 3/3"), std::string::npos);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++lines);
    EXPECT_TRUE(j.contains("psnr"));
  }
  EXPECT_EQ(lines, 3);
  std::filesystem::remove(path);
}

TEST(Fit, NonFiniteLossRaisesDivergence) {
  const SignalDataset ds = constant_images(1, 4, 0.5f);
  Rng rng(13);
  NeoMLP<float> model(tiny_image_model(), rng);
  model.params().at("readout.bias").value(0, 0) = std::numeric_limits<float>::infinity();
  FitConfig f;
  f.epochs = 1;
  f.batch_points = 4;
  EXPECT_THROW(fit(ds, model, f), DivergenceError);
}

TEST(Fit, EmptyEpochsAreAConfigError) {
  const SignalDataset ds = constant_images(1, 2, 0.5f);
  Rng rng(14);
  NeoMLP<float> model(tiny_image_model(), rng);
  FitConfig f;
  f.epochs = 1;
  f.batch_points = 64;
  EXPECT_THROW(fit(ds, model, f), ConfigError);
}

TEST(Fit, WidthMismatchIsAConfigError) {
  Rng rng(15);
  const SignalDataset ds = ingest_audio(synth_tones({{100, 1, 0}}, 800, 0.1));
  NeoMLP<float> model(tiny_image_model(), rng);
  EXPECT_THROW(fit(ds, model, FitConfig{}), ConfigError);
}

TEST(Finetune, ZeroEpochsReturnsTheInitialLatents) {
  const SignalDataset ds = constant_images(3, 4, 0.3f);
  const ModelConfig cfg = tiny_image_model();
  Rng rng(16);
  const NeoMLP<float> model(cfg, rng);
  FitConfig f;
  f.epochs = 0;
  f.seed = 9;
  const FitResult r = finetune(ds, model, f);
  Rng expect_rng(9, "latents");
  const auto init = init_signal_latents(ds, cfg, expect_rng);
  EXPECT_TRUE(latent_bank(r.latents) == latent_bank(init));
  EXPECT_EQ(r.latents[2].signal_id, "c2");
}

TEST(Finetune, KeepsTheBackboneAndImproves) {
  const SignalDataset ds = constant_images(2, 6, 0.4f);
  const ModelConfig cfg = tiny_image_model();
  Rng rng(17);
  NeoMLP<float> model(cfg, rng);
  FitConfig f;
  f.epochs = 20;
  f.batch_points = 18;
  fit(ds, model, f);
  const Digest before = parameter_checksum(model.params());

  FitConfig ft;
  ft.epochs = 0;
  ft.seed = 1;
  const FitResult init = finetune(ds, model, ft);
  ft.epochs = 30;
  ft.batch_points = 18;
  ft.lr = 1e-2;
  const FitResult tuned = finetune(ds, model, ft);
  EXPECT_EQ(parameter_checksum(model.params()), before);
  auto mse = [&](const FitResult& r) {
    const Mat<float> d = predict_dataset(model, ds, r.latents) - ds.targets;
    return d.squaredNorm() / static_cast<double>(d.size());
  };
  EXPECT_LT(mse(tuned), mse(init));
  // Without replacement every epoch makes ceil(P / B) steps.
  EXPECT_EQ(tuned.steps, 30 * 4);
}

TEST(Finetune, TimeBudgetStopsEarly) {
  const SignalDataset ds = constant_images(1, 8, 0.4f);
  Rng rng(18);
  const NeoMLP<float> model(tiny_image_model(), rng);
  FitConfig f;
  f.epochs = 1000000;
  f.batch_points = 8;
  f.time_budget_seconds = 0.2;
  const FitResult r = finetune(ds, model, f);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_LT(r.seconds, 5.0);
}
