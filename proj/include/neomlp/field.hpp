#pragma once

// NeoMLP as an auto-decoding conditional neural field: point sampling, the
// fitting stage (backbone and throwaway latents trained together) and the
// finetuning stage (fresh latents against a frozen backbone).

#include "neomlp/data.hpp"
#include "neomlp/model.hpp"
#include "neomlp/optim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace neomlp {

enum class Sampling { WithReplacement, WithoutReplacement };

std::string to_string(Sampling s);
Sampling parse_sampling(const std::string& s);

enum class LrSchedule { Constant, Cosine };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

struct EpochStats {
  int epoch = 0;        // 1-based
  long step = 0;        // optimizer steps completed so far
  double loss = 0.0;    // mean batch loss over the epoch
  double psnr = 0.0;    // PSNR of that mean loss at the dataset peak
  double seconds = 0.0;  // wall time since training started
};

struct FitConfig {
  int epochs = 100;
  Index batch_points = 4096;
  double lr = 5e-3;
  AdamConfig adam;  // betas, eps and weight decay; `lr` above wins
  Sampling sampling = Sampling::WithReplacement;
  uint64_t seed = 0;
  /// Each epoch stops after this fraction of the point pool.
  double epoch_point_fraction = 1.0;
  LrSchedule schedule = LrSchedule::Constant;
  /// Cosine schedules decay to lr * lr_final_factor at the last planned step.
  double lr_final_factor = 0.0;
  /// Replaces `schedule` when set: learning rate for a 0-based step.
  std::function<double(long step, long total_steps)> lr_hook;
  /// Stop after the step that crosses this wall-clock budget; 0 disables.
  double time_budget_seconds = 0.0;
  /// Append-only JSON lines {"epoch", "step", "loss", "psnr"}; empty disables.
  std::filesystem::path metrics_path;
  /// One telemetry line per epoch; null silences.
  std::ostream* log = nullptr;
  std::function<void(const EpochStats&)> on_epoch;

  [[nodiscard]] double lr_at(long step, long total_steps) const;
  void validate() const;
};

/// Reads and writes the persisted keys: epochs, batch_points, lr, seed,
/// epoch_point_fraction, sampling, lr_schedule, lr_final_factor, beta1,
/// beta2, eps, weight_decay, time_budget_seconds. Missing keys keep defaults.
void to_json(nlohmann::json& j, const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);

struct PointBatch {
  Mat<float> coords;   // B x I
  Mat<float> targets;  // B x O, masked entries zero
  Mat<float> mask;     // B x O
  std::vector<Index> signal;

  [[nodiscard]] Index size() const { return coords.rows(); }
};

PointBatch gather_batch(const SignalDataset& ds, std::span<const Index> points);

/// B point indices drawn uniformly with replacement from [0, P).
std::vector<Index> sample_fit_indices(Index P, Index B, Rng& rng);
PointBatch sample_fit_batch(const SignalDataset& ds, Index B, Rng& rng);

/// A random partition of [0, P) into ceil(P / B) batches, the last possibly short.
std::vector<std::vector<Index>> sample_finetune_partition(Index P, Index B, Rng& rng);
std::vector<PointBatch> sample_finetune_epoch(const SignalDataset& ds, Index B, Rng& rng);

/// Batches per epoch: floor(fraction * P / B) with replacement (incomplete
/// batches dropped), ceil(fraction * P / B) without.
Index iterations_per_epoch(Index P, Index B, double fraction, Sampling sampling);

struct FitResult {
  std::vector<EpochStats> history;
  long steps = 0;
  double seconds = 0.0;
  bool stopped_early = false;  // time budget reached
  /// The latents trained alongside the weights (fit) or the finetuned ones.
  std::vector<LatentSet<float>> latents;

  [[nodiscard]] double final_loss() const { return history.empty() ? 0.0 : history.back().loss; }
};

/// Fresh per-signal latents drawn from N(0, cfg.latent_variance).
std::vector<LatentSet<float>> init_signal_latents(const SignalDataset& ds, const ModelConfig& cfg, Rng& rng);

/// Trains the backbone and one latent set per signal. Θ is frozen on return.
/// All samples come from the "sampling" sub-stream of cfg.seed and latents
/// from its "latents" sub-stream. Throws DivergenceError on a non-finite loss.
FitResult fit(const SignalDataset& ds, NeoMLP<float>& model, const FitConfig& cfg);

/// Optimises fresh latents for every signal of `ds` with the backbone held
/// fixed. Throws ContractViolation if any backbone weight changed.
FitResult finetune(const SignalDataset& ds, const NeoMLP<float>& backbone, const FitConfig& cfg);

/// Latents in signal order as an N x (H+O)*D bank.
Mat<float> latent_bank(const std::vector<LatentSet<float>>& latents);

/// Predictions for every point of `ds` using each signal's latents.
Mat<float> predict_dataset(const NeoMLP<float>& model, const SignalDataset& ds,
                           const std::vector<LatentSet<float>>& latents);

}  // namespace neomlp
