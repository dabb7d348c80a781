#include "neomlp/field.hpp"

#include "neomlp/error.hpp"
#include "neomlp/store.hpp"
#include "train_loop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace neomlp {

using json = nlohmann::json;

std::string to_string(Sampling s) { return s == Sampling::WithReplacement ? "with_replacement" : "without_replacement"; }

Sampling parse_sampling(const std::string& s) {
  if (s == "with_replacement") return Sampling::WithReplacement;
  if (s == "without_replacement") return Sampling::WithoutReplacement;
  throw ConfigError("unknown sampling '" + s + "' (expected with_replacement or without_replacement)");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw ConfigError("unknown lr_schedule '" + s + "' (expected constant or cosine)");
}

double FitConfig::lr_at(long step, long total_steps) const {
  if (lr_hook) return lr_hook(step, total_steps);
  if (schedule == LrSchedule::Constant || total_steps <= 1) return lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  const double floor = lr * lr_final_factor;
  return floor + 0.5 * (lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void FitConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_points < 1) throw ConfigError("batch_points must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(epoch_point_fraction > 0.0 && epoch_point_fraction <= 1.0))
    throw ConfigError("epoch_point_fraction must be in (0, 1]");
  if (!(lr_final_factor >= 0.0 && lr_final_factor <= 1.0)) throw ConfigError("lr_final_factor must be in [0, 1]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (adam.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (time_budget_seconds < 0.0) throw ConfigError("time_budget_seconds must be non-negative");
}

void to_json(json& j, const FitConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_points", c.batch_points},
           {"lr", c.lr},
           {"seed", c.seed},
           {"epoch_point_fraction", c.epoch_point_fraction},
           {"sampling", to_string(c.sampling)},
           {"lr_schedule", c.lr_hook ? "custom" : to_string(c.schedule)},
           {"lr_final_factor", c.lr_final_factor},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"eps", c.adam.eps},
           {"weight_decay", c.adam.weight_decay},
           {"time_budget_seconds", c.time_budget_seconds}};
}

void from_json(const json& j, FitConfig& c) {
  if (!j.is_object()) throw ConfigError("fit config must be a JSON object");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("epochs", c.epochs);
  get("batch_points", c.batch_points);
  get("lr", c.lr);
  get("seed", c.seed);
  get("epoch_point_fraction", c.epoch_point_fraction);
  if (j.contains("sampling")) c.sampling = parse_sampling(j.at("sampling").get<std::string>());
  // A "custom" schedule was a code-level hook and cannot be restored from JSON.
  if (j.contains("lr_schedule") && j.at("lr_schedule") != "custom")
    c.schedule = parse_lr_schedule(j.at("lr_schedule").get<std::string>());
  get("lr_final_factor", c.lr_final_factor);
  get("beta1", c.adam.beta1);
  get("beta2", c.adam.beta2);
  get("eps", c.adam.eps);
  get("weight_decay", c.adam.weight_decay);
  get("time_budget_seconds", c.time_budget_seconds);
}

PointBatch gather_batch(const SignalDataset& ds, std::span<const Index> points) {
  const auto B = static_cast<Index>(points.size());
  PointBatch b;
  b.coords.resize(B, ds.input_dims);
  b.targets.resize(B, ds.output_dims);
  b.mask.resize(B, ds.output_dims);
  b.signal.resize(points.size());
  for (Index r = 0; r < B; ++r) {
    const Index p = points[static_cast<size_t>(r)];
    if (p < 0 || p >= ds.num_points()) throw ConfigError("gather_batch: point index out of range");
    b.coords.row(r) = ds.coords.row(p);
    b.targets.row(r) = ds.targets.row(p);
    b.mask.row(r) = ds.mask.row(p);
    b.signal[static_cast<size_t>(r)] = ds.signal_of_point[static_cast<size_t>(p)];
  }
  return b;
}

std::vector<Index> sample_fit_indices(Index P, Index B, Rng& rng) {
  if (P <= 0) throw ConfigError("cannot sample from an empty dataset");
  std::vector<Index> idx(static_cast<size_t>(B));
  for (auto& i : idx) i = static_cast<Index>(rng.index(static_cast<uint64_t>(P)));
  return idx;
}

PointBatch sample_fit_batch(const SignalDataset& ds, Index B, Rng& rng) {
  const auto idx = sample_fit_indices(ds.num_points(), B, rng);
  return gather_batch(ds, idx);
}

std::vector<std::vector<Index>> sample_finetune_partition(Index P, Index B, Rng& rng) {
  if (P <= 0) throw ConfigError("cannot sample from an empty dataset");
  if (B < 1) throw ConfigError("batch size must be positive");
  std::vector<Index> order(static_cast<size_t>(P));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < P; start += B) {
    const Index end = std::min(P, start + B);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::vector<PointBatch> sample_finetune_epoch(const SignalDataset& ds, Index B, Rng& rng) {
  std::vector<PointBatch> out;
  for (const auto& idx : sample_finetune_partition(ds.num_points(), B, rng)) out.push_back(gather_batch(ds, idx));
  return out;
}

Index iterations_per_epoch(Index P, Index B, double fraction, Sampling sampling) {
  if (B < 1) throw ConfigError("batch size must be positive");
  const double pool = fraction * static_cast<double>(P);
  // A fraction of exactly 1 must not lose a batch to rounding.
  if (fraction == 1.0) return sampling == Sampling::WithReplacement ? P / B : (P + B - 1) / B;
  const double per = pool / static_cast<double>(B);
  return static_cast<Index>(sampling == Sampling::WithReplacement ? std::floor(per) : std::ceil(per));
}

std::vector<LatentSet<float>> init_signal_latents(const SignalDataset& ds, const ModelConfig& cfg, Rng& rng) {
  std::vector<LatentSet<float>> out;
  for (const auto& info : ds.signals) {
    auto z = init_latents<float>(cfg.hidden_nodes, cfg.output_dims, cfg.token_dim, cfg.latent_variance, rng);
    z.signal_id = info.id;
    z.label = info.label;
    out.push_back(std::move(z));
  }
  return out;
}

Mat<float> latent_bank(const std::vector<LatentSet<float>>& latents) {
  if (latents.empty()) return {};
  Mat<float> bank(static_cast<Index>(latents.size()), latents.front().flatten().size());
  for (size_t n = 0; n < latents.size(); ++n) {
    const RowVec<float> flat = latents[n].flatten();
    if (flat.size() != bank.cols()) throw ConfigError("latent sets have inconsistent shapes");
    bank.row(static_cast<Index>(n)) = flat;
  }
  return bank;
}

namespace {

void check_dataset(const SignalDataset& ds, const ModelConfig& cfg) {
  if (ds.input_dims != cfg.input_dims || ds.output_dims != cfg.output_dims)
    throw ConfigError("dataset is " + std::to_string(ds.input_dims) + " -> " + std::to_string(ds.output_dims) +
                      " but the model is " + std::to_string(cfg.input_dims) + " -> " +
                      std::to_string(cfg.output_dims));
  if (ds.num_signals() == 0) throw ConfigError("dataset has no signals");
}

std::vector<LatentSet<float>> unpack_bank(const Mat<float>& bank, const std::vector<LatentSet<float>>& like,
                                          const ModelConfig& cfg) {
  std::vector<LatentSet<float>> out;
  for (size_t n = 0; n < like.size(); ++n) {
    auto z = LatentSet<float>::unflatten(bank.row(static_cast<Index>(n)), cfg.hidden_nodes, cfg.output_dims,
                                         cfg.token_dim);
    z.signal_id = like[n].signal_id;
    z.label = like[n].label;
    out.push_back(std::move(z));
  }
  return out;
}

template <class Model>
FitResult train_latents(const SignalDataset& ds, Model& model, const FitConfig& cfg, Sampling sampling,
                        ParameterStore<float>* backbone) {
  const ModelConfig& mc = model.config();
  check_dataset(ds, mc);
  Rng latent_rng(cfg.seed, "latents");
  const auto init = init_signal_latents(ds, mc, latent_rng);
  ParameterStore<float> latents;
  auto& bank = latents.add("latents", "latents", latent_bank(init), /*row_sparse=*/true);
  AdamConfig adam = cfg.adam;

  auto step = [&](const PointBatch& b, double lr) {
    adam.lr = lr;
    Tape<float> tape;
    Var<float> z = gather_rows(tape.leaf(bank), b.signal);
    for (Index s : b.signal) bank.touch_row(s);
    Var<float> loss = masked_mse(model.forward(tape, b.coords, z), b.targets, b.mask);
    tape.backward(loss);
    if (backbone != nullptr) adam_step(*backbone, adam);
    adam_step(latents, adam);
    return static_cast<double>(loss.value()(0, 0));
  };
  auto loop = detail::run_training(ds, cfg, sampling, step);

  FitResult r;
  r.history = std::move(loop.history);
  r.steps = loop.steps;
  r.seconds = loop.seconds;
  r.stopped_early = loop.stopped_early;
  r.latents = unpack_bank(bank.value, init, mc);
  return r;
}

}  // namespace

FitResult fit(const SignalDataset& ds, NeoMLP<float>& model, const FitConfig& cfg) {
  model.params().set_frozen("backbone", false);
  FitResult r = train_latents(ds, model, cfg, Sampling::WithReplacement, &model.params());
  model.params().set_frozen("backbone", true);
  return r;
}

FitResult finetune(const SignalDataset& ds, const NeoMLP<float>& backbone, const FitConfig& cfg) {
  const Digest before = parameter_checksum(backbone.params());
  FitResult r = train_latents(ds, backbone, cfg, Sampling::WithoutReplacement, nullptr);
  if (parameter_checksum(backbone.params()) != before)
    throw ContractViolation("finetune modified the frozen backbone");
  return r;
}

Mat<float> predict_dataset(const NeoMLP<float>& model, const SignalDataset& ds,
                           const std::vector<LatentSet<float>>& latents) {
  if (static_cast<Index>(latents.size()) != ds.num_signals())
    throw ConfigError("predict_dataset: one latent set per signal is required");
  return model.predict(ds.coords, latent_bank(latents), ds.signal_of_point);
}

}  // namespace neomlp
