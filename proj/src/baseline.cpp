#include "neomlp/baseline.hpp"

#include "neomlp/error.hpp"
#include "train_loop.hpp"

#include <cmath>
#include <numbers>

namespace neomlp {

using json = nlohmann::json;

std::string to_string(BaselineKind k) { return k == BaselineKind::Siren ? "siren" : "rffnet"; }

BaselineKind parse_baseline(const std::string& s) {
  if (s == "siren") return BaselineKind::Siren;
  if (s == "rffnet") return BaselineKind::RFFNet;
  throw ConfigError("unknown baseline '" + s + "' (expected siren or rffnet)");
}

void BaselineConfig::validate() const {
  if (input_dims < 1 || output_dims < 1) throw ConfigError("baseline: input and output dims must be positive");
  if (layers < 2) throw ConfigError("baseline: at least two linear layers are required");
  if (width < 1) throw ConfigError("baseline: width must be positive");
  if (kind == BaselineKind::Siren && !(omega0 > 0.0 && hidden_omega0 > 0.0))
    throw ConfigError("baseline: siren frequencies must be positive");
  if (kind == BaselineKind::RFFNet && (d_rff < 2 || d_rff % 2 != 0))
    throw ConfigError("baseline: d_rff must be a positive even number");
  if (kind == BaselineKind::RFFNet && rff_sigma < 0.0) throw ConfigError("baseline: rff_sigma must be >= 0");
}

long BaselineConfig::parameter_count() const {
  const long in = kind == BaselineKind::Siren ? input_dims : d_rff;
  long n = (in + 1) * width;
  n += static_cast<long>(layers - 2) * (width + 1) * width;
  n += (width + 1) * output_dims;
  return n;
}

void to_json(json& j, const BaselineConfig& c) {
  j = json{{"kind", to_string(c.kind)}, {"input_dims", c.input_dims}, {"output_dims", c.output_dims},
           {"layers", c.layers},        {"width", c.width},           {"omega0", c.omega0},
           {"hidden_omega0", c.hidden_omega0}, {"d_rff", c.d_rff},    {"rff_sigma", c.rff_sigma}};
}

void from_json(const json& j, BaselineConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("kind")) c.kind = parse_baseline(j.at("kind").get<std::string>());
  get("input_dims", c.input_dims);
  get("output_dims", c.output_dims);
  get("layers", c.layers);
  get("width", c.width);
  get("omega0", c.omega0);
  get("hidden_omega0", c.hidden_omega0);
  get("d_rff", c.d_rff);
  get("rff_sigma", c.rff_sigma);
}

namespace {

Mat<float> uniform(Index rows, Index cols, double bound, Rng& rng) {
  Mat<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return m;
}

std::string layer_name(int l, const char* leaf) { return "layers." + std::to_string(l) + "." + leaf; }

}  // namespace

BaselineField::BaselineField(const BaselineConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const bool siren = cfg_.kind == BaselineKind::Siren;
  if (!siren) {
    Mat<float> freq(cfg_.input_dims, cfg_.d_rff / 2);
    for (Index i = 0; i < freq.size(); ++i) freq.data()[i] = static_cast<float>(rng.normal(0.0, cfg_.rff_sigma));
    params_.add("rff.frequencies", "backbone", std::move(freq), false, /*trainable=*/false);
  }
  Index fan_in = siren ? cfg_.input_dims : cfg_.d_rff;
  for (int l = 0; l < cfg_.layers; ++l) {
    const bool last = l + 1 == cfg_.layers;
    const Index fan_out = last ? cfg_.output_dims : cfg_.width;
    double w_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (siren) w_bound = l == 0 ? 1.0 / static_cast<double>(fan_in) : std::sqrt(6.0 / fan_in) / cfg_.hidden_omega0;
    const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    params_.add(layer_name(l, "weight"), "backbone", uniform(fan_in, fan_out, w_bound, rng));
    params_.add(layer_name(l, "bias"), "backbone", uniform(1, fan_out, b_bound, rng));
    fan_in = fan_out;
  }
}

Mat<float> BaselineField::lift(const Mat<float>& coords) const {
  const Mat<float>& freq = params_.at("rff.frequencies").value;
  if (coords.cols() != freq.rows()) throw ConfigError("baseline: coordinate width mismatch");
  const Index m = freq.cols();
  Mat<float> out(coords.rows(), 2 * m);
  const Mat<double> f = freq.cast<double>();
  for (Index r = 0; r < coords.rows(); ++r) {
    for (Index j = 0; j < m; ++j) {
      double turns = 0.0;
      for (Index i = 0; i < coords.cols(); ++i) turns += static_cast<double>(coords(r, i)) * f(i, j);
      const double phase = 2.0 * std::numbers::pi * (turns - std::nearbyint(turns));
      out(r, j) = static_cast<float>(std::cos(phase));
      out(r, m + j) = static_cast<float>(std::sin(phase));
    }
  }
  return out;
}

template <class Bind>
Var<float> BaselineField::forward_impl(Tape<float>& tape, const Mat<float>& coords, Bind&& bind) const {
  if (coords.cols() != cfg_.input_dims) throw ConfigError("baseline: coordinate width mismatch");
  const bool siren = cfg_.kind == BaselineKind::Siren;
  Var<float> h = siren ? tape.constant_ref(coords) : tape.constant(lift(coords));
  for (int l = 0; l < cfg_.layers; ++l) {
    h = affine(h, bind(layer_name(l, "weight")), bind(layer_name(l, "bias")));
    if (l + 1 == cfg_.layers) break;
    if (siren)
      h = sin_scaled(h, static_cast<float>(l == 0 ? cfg_.omega0 : cfg_.hidden_omega0));
    else
      h = relu(h);
  }
  return h;
}

Var<float> BaselineField::forward(Tape<float>& tape, const Mat<float>& coords) {
  return forward_impl(tape, coords, [&](const std::string& name) { return tape.leaf(params_.at(name)); });
}

Mat<float> BaselineField::predict(const Mat<float>& coords, Index chunk) const {
  Mat<float> out(coords.rows(), cfg_.output_dims);
  for (Index start = 0; start < coords.rows(); start += chunk) {
    const Index n = std::min(chunk, coords.rows() - start);
    Tape<float> tape;
    const Mat<float> part = coords.middleRows(start, n);
    auto bind = [&](const std::string& name) { return tape.constant_ref(params_.at(name).value); };
    out.middleRows(start, n) = forward_impl(tape, part, bind).value();
  }
  return out;
}

BaselineField build_baseline(const BaselineConfig& cfg, uint64_t seed) {
  Rng rng(seed, "init");
  return BaselineField(cfg, rng);
}

FitResult fit_baseline(const SignalDataset& ds, BaselineField& model, const FitConfig& cfg) {
  if (ds.num_signals() != 1) throw ConfigError("baselines fit exactly one signal");
  if (ds.input_dims != model.config().input_dims || ds.output_dims != model.config().output_dims)
    throw ConfigError("baseline: dataset widths do not match the model");
  AdamConfig adam = cfg.adam;
  auto step = [&](const PointBatch& b, double lr) {
    adam.lr = lr;
    Tape<float> tape;
    Var<float> loss = masked_mse(model.forward(tape, b.coords), b.targets, b.mask);
    tape.backward(loss);
    adam_step(model.params(), adam);
    return static_cast<double>(loss.value()(0, 0));
  };
  auto loop = detail::run_training(ds, cfg, cfg.sampling, step);
  FitResult r;
  r.history = std::move(loop.history);
  r.steps = loop.steps;
  r.seconds = loop.seconds;
  r.stopped_early = loop.stopped_early;
  return r;
}

}  // namespace neomlp
