#pragma once

// Classification from ν-reps: each signal's latent set is flattened to one
// vector and fed to a small SiLU MLP trained with input noise, dropout,
// mixup and decoupled weight decay. Evaluation uses an exponential moving
// average of the weights.

#include "neomlp/autodiff.hpp"
#include "neomlp/rng.hpp"
#include "neomlp/store.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace neomlp {

/// Hidden rows then output rows, row-major: length (H + O) * D.
RowVec<float> flatten_nurep(const LatentSet<float>& z);

struct ClassifierConfig {
  int layers = 3;  // linear layers including the output layer
  int hidden = 256;
  double dropout = 0.3;
  double lr = 8e-3;
  Index batch_size = 256;
  double weight_decay = 1e-4;
  double input_noise = 0.05;  // std of Gaussian noise on standardised inputs
  bool mixup = true;
  double mixup_alpha = 0.2;
  double ema_decay = 0.999;
  /// Ramp the EMA decay as min(decay, (1 + t) / (10 + t)) over the first steps.
  bool ema_warmup = true;
  int epochs = 100;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// Convex combination of rows with a partner permutation:
/// x' = lambda x + (1 - lambda) x[perm], likewise for the one-hot labels.
struct MixedBatch {
  Mat<float> inputs;
  Mat<float> targets;
};
MixedBatch mixup(const Mat<float>& inputs, const Mat<float>& targets, double lambda, const std::vector<Index>& perm);
/// Draws lambda ~ Beta(alpha, alpha) and a random partner permutation.
MixedBatch mixup(const Mat<float>& inputs, const Mat<float>& targets, double alpha, Rng& rng);

Mat<float> one_hot(const std::vector<int>& labels, int classes);

/// Exponential moving average of a parameter store.
class EmaShadow {
 public:
  EmaShadow() = default;
  EmaShadow(const ParameterStore<float>& params, double decay, bool warmup);

  void update(const ParameterStore<float>& params);
  [[nodiscard]] const std::vector<Mat<float>>& values() const { return values_; }
  [[nodiscard]] long updates() const { return updates_; }
  [[nodiscard]] double current_decay() const;

 private:
  std::vector<Mat<float>> values_;
  double decay_ = 0.0;
  bool warmup_ = true;
  long updates_ = 0;
};

struct EpochAccuracy {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(Index input_dim, int classes, const ClassifierConfig& cfg, Rng& rng);

  ParameterStore<float>& params() { return params_; }
  [[nodiscard]] const ParameterStore<float>& params() const { return params_; }
  [[nodiscard]] int classes() const { return classes_; }
  [[nodiscard]] const ClassifierConfig& config() const { return cfg_; }

  /// Feature standardisation fitted on the training inputs.
  void fit_standardizer(const Mat<float>& inputs);
  [[nodiscard]] Mat<float> standardize(const Mat<float>& inputs) const;

  /// Training-mode logits on standardised inputs (dropout from `rng`).
  Var<float> forward(Tape<float>& tape, const Mat<float>& inputs, Rng& rng);
  /// Evaluation logits with the given weights (EMA shadow or raw), on raw inputs.
  [[nodiscard]] Mat<float> logits(const Mat<float>& inputs, const std::vector<Mat<float>>& weights) const;
  [[nodiscard]] Mat<float> logits(const Mat<float>& inputs) const;

  [[nodiscard]] std::vector<Mat<float>> weights() const;

 private:
  ClassifierConfig cfg_;
  int classes_ = 0;
  ParameterStore<float> params_;
  RowVec<float> mean_, inv_std_;
};

struct TrainedClassifier {
  Classifier model;
  std::vector<Mat<float>> eval_weights;  // EMA weights at the best validation epoch
  std::vector<EpochAccuracy> history;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  Digest backbone{};

  [[nodiscard]] std::vector<int> predict(const Mat<float>& inputs) const;
};

/// Trains on labelled feature rows; `val_inputs` may be empty, in which case
/// the final epoch's weights are kept.
TrainedClassifier train_classifier(const Mat<float>& train_inputs, const std::vector<int>& train_labels,
                                   const Mat<float>& val_inputs, const std::vector<int>& val_labels,
                                   const ClassifierConfig& cfg);

/// ν-set form: both sets must share a backbone fingerprint and carry labels.
TrainedClassifier train_classifier(const NuSet& train, const NuSet& val, const ClassifierConfig& cfg);

/// Top-1 accuracy in [0, 1].
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);
double evaluate_classifier(const TrainedClassifier& clf, const Mat<float>& inputs, const std::vector<int>& labels);
/// Throws FingerprintMismatch if `test` came from another backbone.
double evaluate_classifier(const TrainedClassifier& clf, const NuSet& test);

}  // namespace neomlp
