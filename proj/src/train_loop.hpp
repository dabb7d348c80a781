#pragma once

// Epoch/iteration driver shared by the NeoMLP field and the baselines, so
// every model consumes the same point stream for a given seed.

#include "neomlp/error.hpp"
#include "neomlp/field.hpp"
#include "neomlp/metrics.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <ostream>
#include <string>

namespace neomlp::detail {

struct LoopOutcome {
  std::vector<EpochStats> history;
  long steps = 0;
  double seconds = 0.0;
  bool stopped_early = false;
};

/// `step(batch, lr)` performs one optimizer update and returns the batch loss.
template <class StepFn>
LoopOutcome run_training(const SignalDataset& ds, const FitConfig& cfg, Sampling sampling, StepFn&& step) {
  cfg.validate();
  LoopOutcome out;
  if (cfg.epochs == 0) return out;
  const Index P = ds.num_points();
  if (P == 0) throw ConfigError("training: the dataset has no points");
  const Index M = iterations_per_epoch(P, cfg.batch_points, cfg.epoch_point_fraction, sampling);
  if (M == 0)
    throw ConfigError("training: batch_points " + std::to_string(cfg.batch_points) + " exceeds the " +
                      std::to_string(P) + " points available per epoch");
  const long total = static_cast<long>(cfg.epochs) * static_cast<long>(M);
  const double peak = ds.peak();

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path, std::ios::app);
    if (!metrics) throw IoError("cannot open metrics file " + cfg.metrics_path.string());
  }

  Rng rng(cfg.seed, "sampling");
  std::deque<double> recent;  // losses of the last 1000 steps
  long last_warning = -1000;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  for (int epoch = 1; epoch <= cfg.epochs && !out.stopped_early; ++epoch) {
    std::vector<std::vector<Index>> plan;
    if (sampling == Sampling::WithoutReplacement) {
      plan = sample_finetune_partition(P, cfg.batch_points, rng);
      plan.resize(static_cast<size_t>(M));
    }
    double loss_sum = 0.0;
    Index done = 0;
    for (Index it = 0; it < M; ++it) {
      const std::vector<Index> idx = sampling == Sampling::WithReplacement
                                         ? sample_fit_indices(P, cfg.batch_points, rng)
                                         : std::move(plan[static_cast<size_t>(it)]);
      const PointBatch batch = gather_batch(ds, idx);
      const double loss = step(batch, cfg.lr_at(out.steps, total));
      if (!std::isfinite(loss))
        throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(out.steps + 1));
      ++out.steps;
      loss_sum += loss;
      ++done;
      recent.push_back(loss);
      if (recent.size() > 1001) recent.pop_front();
      if (recent.size() == 1001 && loss > 10.0 * recent.front() && out.steps - last_warning >= 1000) {
        std::cerr << "warning: loss grew from " << recent.front() << " to " << loss << " over 1000 steps (step "
                  << out.steps << ")\n";
        last_warning = out.steps;
      }
      if (cfg.time_budget_seconds > 0.0 && elapsed() >= cfg.time_budget_seconds) {
        out.stopped_early = epoch < cfg.epochs || it + 1 < M;
        break;
      }
    }
    EpochStats s;
    s.epoch = epoch;
    s.step = out.steps;
    s.loss = loss_sum / static_cast<double>(done);
    s.psnr = psnr_from_mse(s.loss, peak);
    s.seconds = elapsed();
    out.history.push_back(s);
    if (cfg.log != nullptr)
      *cfg.log << "epoch " << epoch << "/" << cfg.epochs << " step " << s.step << " loss " << s.loss << " psnr "
               << format_db(s.psnr) << " dB (" << format_db(s.seconds) << " s)" << std::endl;
    if (metrics.is_open()) {
      nlohmann::json line{{"epoch", s.epoch}, {"step", s.step}, {"loss", s.loss}};
      line["psnr"] = std::isinf(s.psnr) ? nlohmann::json("inf") : nlohmann::json(s.psnr);
      metrics << line.dump() << '\n';
      metrics.flush();
    }
    if (cfg.on_epoch) cfg.on_epoch(s);
  }
  out.seconds = elapsed();
  return out;
}

}  // namespace neomlp::detail
