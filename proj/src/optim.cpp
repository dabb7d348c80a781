#include "neomlp/optim.hpp"

#include "neomlp/error.hpp"

#include <algorithm>
#include <cmath>

namespace neomlp {

namespace {

template <class S>
void adam_update_row(Parameter<S>& p, Index row, long step, const AdamConfig& cfg) {
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.lr);
  const S eps = static_cast<S>(cfg.eps);
  const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(step)));
  const S bc2_sqrt = static_cast<S>(std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(step))));
  const S decay = static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);
  auto g = p.grad.row(row).array();
  auto m = p.m.row(row).array();
  auto v = p.v.row(row).array();
  auto w = p.value.row(row).array();
  m = b1 * m + (S(1) - b1) * g;
  v = b2 * v + (S(1) - b2) * g * g;
  if (cfg.weight_decay != 0.0) w *= decay;
  w -= (lr / bc1) * m / (v.sqrt() / bc2_sqrt + eps);
}

}  // namespace

template <class S>
void adam_step(ParameterStore<S>& store, const AdamConfig& cfg) {
  for (auto& p : store) {
    if (p.trainable && !p.frozen) {
      if (p.row_sparse) {
        for (Index r = 0; r < p.value.rows(); ++r) {
          if (!p.row_touched[static_cast<size_t>(r)]) continue;
          const long step = ++p.row_steps[static_cast<size_t>(r)];
          adam_update_row(p, r, step, cfg);
        }
      } else {
        ++p.step;
        for (Index r = 0; r < p.value.rows(); ++r) adam_update_row(p, r, p.step, cfg);
      }
    }
  }
  store.zero_grad();
}

template void adam_step(ParameterStore<float>&, const AdamConfig&);
template void adam_step(ParameterStore<double>&, const AdamConfig&);

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

bool GradCheckReport::ok() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.ok; });
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json j;
  j["tolerance"] = tolerance;
  j["step"] = step;
  j["max_rel_error"] = max_rel_error;
  j["ok"] = ok();
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"name", e.name},
                   {"max_rel_error", e.max_rel_error},
                   {"argmax", e.argmax},
                   {"analytic", e.analytic_at_max},
                   {"numeric", e.numeric_at_max},
                   {"ok", e.ok}});
  }
  return j;
}

namespace {

double evaluate(const LossBuilder& build) {
  Tape<double> tape;
  return build(tape).value()(0, 0);
}

}  // namespace

std::vector<Mat<double>> finite_difference_oracle(std::span<ParameterStore<double>* const> stores,
                                                  const LossBuilder& build, double h, size_t cap) {
  size_t total = 0;
  for (auto* s : stores) total += s->num_trainable_scalars();
  if (total > cap)
    throw ConfigError("finite_difference_oracle: " + std::to_string(total) + " scalars exceeds the cap of " +
                      std::to_string(cap));
  std::vector<Mat<double>> out;
  for (auto* s : stores) {
    for (auto& p : *s) {
      if (!p.trainable) continue;
      Mat<double> g = Mat<double>::Zero(p.value.rows(), p.value.cols());
      for (Index i = 0; i < p.value.size(); ++i) {
        double& x = p.value.data()[i];
        const double saved = x;
        x = saved + h;
        const double fp = evaluate(build);
        x = saved - h;
        const double fm = evaluate(build);
        x = saved;
        g.data()[i] = (fp - fm) / (2.0 * h);
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

GradCheckReport check_gradients(std::span<ParameterStore<double>* const> stores, const LossBuilder& build,
                                double h, double tolerance) {
  for (auto* s : stores) s->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    tape.backward(loss);
  }
  std::vector<const Parameter<double>*> params;
  std::vector<Mat<double>> analytic;
  for (auto* s : stores) {
    for (auto& p : *s) {
      if (!p.trainable) continue;
      params.push_back(&p);
      analytic.push_back(p.grad);
    }
    s->zero_grad();
  }
  const auto numeric = finite_difference_oracle(stores, build, h);

  GradCheckReport report;
  report.tolerance = tolerance;
  report.step = h;
  for (size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry e;
    e.name = params[k]->name;
    for (Index i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k].data()[i];
      const double n = numeric[k].data()[i];
      const double r = relative_error(a, n);
      if (r > e.max_rel_error || e.argmax < 0) {
        e.max_rel_error = r;
        e.argmax = static_cast<long>(i);
        e.analytic_at_max = a;
        e.numeric_at_max = n;
      }
    }
    e.ok = e.max_rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace neomlp
