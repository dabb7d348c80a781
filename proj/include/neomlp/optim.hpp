#pragma once

#include "neomlp/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace neomlp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) weight decay; 0 disables it.
  double weight_decay = 0.0;
};

/// One bias-corrected Adam update of every trainable, non-frozen parameter in
/// `store`, followed by clearing all gradients (frozen groups included).
/// Row-sparse parameters only update rows marked as touched.
template <class S>
void adam_step(ParameterStore<S>& store, const AdamConfig& cfg);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  long argmax = -1;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;
  double step = 1e-5;
  double max_rel_error = 0.0;

  [[nodiscard]] bool ok() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

using LossBuilder = std::function<Var<double>(Tape<double>&)>;

inline constexpr size_t kFiniteDifferenceCap = 20000;

/// Central differences of the scalar produced by `build` with respect to every
/// trainable scalar of `stores`. Refuses (ConfigError) above `cap` scalars.
std::vector<Mat<double>> finite_difference_oracle(std::span<ParameterStore<double>* const> stores,
                                                  const LossBuilder& build, double h,
                                                  size_t cap = kFiniteDifferenceCap);

/// Compares backward() against finite_difference_oracle for every trainable
/// parameter of `stores`. Leaves all gradients cleared.
GradCheckReport check_gradients(std::span<ParameterStore<double>* const> stores, const LossBuilder& build,
                                double h = 1e-5, double tolerance = 1e-4);

}  // namespace neomlp
