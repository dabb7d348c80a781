#pragma once

// Latent-free MLP fields used as comparison points: Siren (sinusoidal
// activations) and RFFNet (random Fourier feature lift followed by a ReLU
// MLP). One model per signal, trained by the same loop as NeoMLP.

#include "neomlp/autodiff.hpp"
#include "neomlp/data.hpp"
#include "neomlp/field.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace neomlp {

enum class BaselineKind { Siren, RFFNet };

std::string to_string(BaselineKind k);
BaselineKind parse_baseline(const std::string& s);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::Siren;
  int input_dims = 1;
  int output_dims = 1;
  int layers = 5;  // linear layers, including the output layer
  int width = 256;
  double omega0 = 30.0;        // siren: first-layer frequency
  double hidden_omega0 = 30.0;  // siren: later layers
  int d_rff = 256;             // rffnet: lift width (cos and sin halves)
  double rff_sigma = 10.0;     // rffnet: frequency standard deviation

  void validate() const;
  [[nodiscard]] long parameter_count() const;
};

void to_json(nlohmann::json& j, const BaselineConfig& c);
void from_json(const nlohmann::json& j, BaselineConfig& c);

class BaselineField {
 public:
  BaselineField(const BaselineConfig& cfg, Rng& rng);

  [[nodiscard]] const BaselineConfig& config() const { return cfg_; }
  ParameterStore<float>& params() { return params_; }
  [[nodiscard]] const ParameterStore<float>& params() const { return params_; }

  Var<float> forward(Tape<float>& tape, const Mat<float>& coords);
  [[nodiscard]] Mat<float> predict(const Mat<float>& coords, Index chunk = 8192) const;

  /// RFFNet input features [cos(2 pi x B), sin(2 pi x B)] for B x I coords.
  [[nodiscard]] Mat<float> lift(const Mat<float>& coords) const;

 private:
  template <class Bind>
  Var<float> forward_impl(Tape<float>& tape, const Mat<float>& coords, Bind&& bind) const;

  BaselineConfig cfg_;
  ParameterStore<float> params_;
};

BaselineField build_baseline(const BaselineConfig& cfg, uint64_t seed);

/// Trains on a single-signal dataset with cfg.sampling on the "sampling"
/// sub-stream of cfg.seed, so a NeoMLP fit with the same seed and batch size
/// sees the identical point sequence.
FitResult fit_baseline(const SignalDataset& ds, BaselineField& model, const FitConfig& cfg);

}  // namespace neomlp
