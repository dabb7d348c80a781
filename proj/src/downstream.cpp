#include "neomlp/downstream.hpp"

#include "neomlp/error.hpp"
#include "neomlp/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace neomlp {

using json = nlohmann::json;

RowVec<float> flatten_nurep(const LatentSet<float>& z) {
  if (z.hidden.rows() > 0 && z.hidden.cols() != z.output.cols())
    throw ConfigError("flatten_nurep: hidden and output widths differ");
  return z.flatten();
}

void ClassifierConfig::validate() const {
  if (layers < 1) throw ConfigError("classifier: layers must be >= 1");
  if (hidden < 1) throw ConfigError("classifier: hidden width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("classifier: dropout must be in [0, 1)");
  if (!(lr > 0.0)) throw ConfigError("classifier: lr must be positive");
  if (batch_size < 1) throw ConfigError("classifier: batch_size must be positive");
  if (weight_decay < 0.0) throw ConfigError("classifier: weight_decay must be non-negative");
  if (input_noise < 0.0) throw ConfigError("classifier: input_noise must be non-negative");
  if (mixup && !(mixup_alpha > 0.0)) throw ConfigError("classifier: mixup_alpha must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("classifier: ema_decay must be in [0, 1)");
  if (epochs < 0) throw ConfigError("classifier: epochs must be non-negative");
}

void to_json(json& j, const ClassifierConfig& c) {
  j = json{{"layers", c.layers},         {"hidden", c.hidden},
           {"dropout", c.dropout},       {"lr", c.lr},
           {"batch_size", c.batch_size}, {"weight_decay", c.weight_decay},
           {"input_noise", c.input_noise}, {"mixup", c.mixup},
           {"mixup_alpha", c.mixup_alpha}, {"ema_decay", c.ema_decay},
           {"ema_warmup", c.ema_warmup}, {"epochs", c.epochs},
           {"seed", c.seed}};
}

void from_json(const json& j, ClassifierConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("layers", c.layers);
  get("hidden", c.hidden);
  get("dropout", c.dropout);
  get("lr", c.lr);
  get("batch_size", c.batch_size);
  get("weight_decay", c.weight_decay);
  get("input_noise", c.input_noise);
  get("mixup", c.mixup);
  get("mixup_alpha", c.mixup_alpha);
  get("ema_decay", c.ema_decay);
  get("ema_warmup", c.ema_warmup);
  get("epochs", c.epochs);
  get("seed", c.seed);
}

MixedBatch mixup(const Mat<float>& inputs, const Mat<float>& targets, double lambda, const std::vector<Index>& perm) {
  if (static_cast<Index>(perm.size()) != inputs.rows() || targets.rows() != inputs.rows())
    throw ConfigError("mixup: row counts disagree");
  const auto l = static_cast<float>(lambda);
  MixedBatch out{inputs, targets};
  for (Index r = 0; r < inputs.rows(); ++r) {
    const Index q = perm[static_cast<size_t>(r)];
    out.inputs.row(r) = l * inputs.row(r) + (1.0f - l) * inputs.row(q);
    out.targets.row(r) = l * targets.row(r) + (1.0f - l) * targets.row(q);
  }
  return out;
}

MixedBatch mixup(const Mat<float>& inputs, const Mat<float>& targets, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng.engine()), b = gamma(rng.engine());
  const double lambda = a + b > 0.0 ? a / (a + b) : 0.5;
  std::vector<Index> perm(static_cast<size_t>(inputs.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  return mixup(inputs, targets, lambda, perm);
}

Mat<float> one_hot(const std::vector<int>& labels, int classes) {
  Mat<float> m = Mat<float>::Zero(static_cast<Index>(labels.size()), classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    m(static_cast<Index>(i), labels[i]) = 1.0f;
  }
  return m;
}

// ---- EMA -----------------------------------------------------------------

EmaShadow::EmaShadow(const ParameterStore<float>& params, double decay, bool warmup) : decay_(decay), warmup_(warmup) {
  for (const auto& p : params) values_.push_back(p.value);
}

double EmaShadow::current_decay() const {
  if (!warmup_) return decay_;
  const auto t = static_cast<double>(updates_);
  return std::min(decay_, (1.0 + t) / (10.0 + t));
}

void EmaShadow::update(const ParameterStore<float>& params) {
  const auto d = static_cast<float>(current_decay());
  size_t i = 0;
  for (const auto& p : params) {
    Mat<float>& s = values_[i++];
    if (d == 0.0f)
      s = p.value;
    else
      s = d * s + (1.0f - d) * p.value;
  }
  ++updates_;
}

// ---- classifier ----------------------------------------------------------

namespace {

std::string weight_name(int l) { return "classifier." + std::to_string(l) + ".weight"; }
std::string bias_name(int l) { return "classifier." + std::to_string(l) + ".bias"; }

}  // namespace

Classifier::Classifier(Index input_dim, int classes, const ClassifierConfig& cfg, Rng& rng)
    : cfg_(cfg), classes_(classes) {
  cfg_.validate();
  if (input_dim < 1 || classes < 2) throw ConfigError("classifier: need at least one input and two classes");
  Index fan_in = input_dim;
  for (int l = 0; l < cfg_.layers; ++l) {
    const Index fan_out = l + 1 == cfg_.layers ? classes : cfg_.hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat<float> w(fan_in, fan_out), b(1, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    params_.add(weight_name(l), "classifier", std::move(w));
    params_.add(bias_name(l), "classifier", std::move(b));
    fan_in = fan_out;
  }
  mean_ = RowVec<float>::Zero(input_dim);
  inv_std_ = RowVec<float>::Ones(input_dim);
}

void Classifier::fit_standardizer(const Mat<float>& inputs) {
  if (inputs.rows() == 0) return;
  const Mat<double> x = inputs.cast<double>();
  const RowVec<double> mean = x.colwise().mean();
  const RowVec<double> var = (x.rowwise() - mean).array().square().colwise().mean();
  mean_ = mean.cast<float>();
  inv_std_ = (var.array() + 1e-12).rsqrt().matrix().cast<float>();
}

Mat<float> Classifier::standardize(const Mat<float>& inputs) const {
  if (inputs.cols() != mean_.size()) throw ConfigError("classifier: input width mismatch");
  return ((inputs.rowwise() - mean_).array().rowwise() * inv_std_.array()).matrix();
}

Var<float> Classifier::forward(Tape<float>& tape, const Mat<float>& inputs, Rng& rng) {
  Var<float> h = tape.constant(inputs);
  std::bernoulli_distribution keep(1.0 - cfg_.dropout);
  const auto scale = static_cast<float>(1.0 / (1.0 - cfg_.dropout));
  for (int l = 0; l < cfg_.layers; ++l) {
    h = affine(h, tape.leaf(params_.at(weight_name(l))), tape.leaf(params_.at(bias_name(l))));
    if (l + 1 == cfg_.layers) break;
    h = silu(h);
    if (cfg_.dropout > 0.0) {
      Mat<float> mask(h.rows(), h.cols());
      for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng.engine()) ? scale : 0.0f;
      h = mul_const(h, mask);
    }
  }
  return h;
}

std::vector<Mat<float>> Classifier::weights() const {
  std::vector<Mat<float>> w;
  for (const auto& p : params_) w.push_back(p.value);
  return w;
}

Mat<float> Classifier::logits(const Mat<float>& inputs, const std::vector<Mat<float>>& weights) const {
  if (weights.size() != 2 * static_cast<size_t>(cfg_.layers)) throw ConfigError("classifier: weight count mismatch");
  Mat<float> h = standardize(inputs);
  for (int l = 0; l < cfg_.layers; ++l) {
    const Mat<float>& w = weights[2 * static_cast<size_t>(l)];
    const Mat<float>& b = weights[2 * static_cast<size_t>(l) + 1];
    Mat<float> z = h * w;
    z.rowwise() += b.row(0);
    if (l + 1 == cfg_.layers) return z;
    h = (z.array() / (1.0f + (-z.array()).exp())).matrix();
  }
  return h;
}

Mat<float> Classifier::logits(const Mat<float>& inputs) const { return logits(inputs, weights()); }

std::vector<int> TrainedClassifier::predict(const Mat<float>& inputs) const {
  const Mat<float> z = model.logits(inputs, eval_weights);
  std::vector<int> out(static_cast<size_t>(z.rows()));
  for (Index r = 0; r < z.rows(); ++r) {
    Index arg = 0;
    z.row(r).maxCoeff(&arg);
    out[static_cast<size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw ConfigError("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

TrainedClassifier train_classifier(const Mat<float>& train_inputs, const std::vector<int>& train_labels,
                                   const Mat<float>& val_inputs, const std::vector<int>& val_labels,
                                   const ClassifierConfig& cfg) {
  cfg.validate();
  const auto N = train_inputs.rows();
  if (N == 0) throw ConfigError("classifier: the training set is empty");
  if (static_cast<Index>(train_labels.size()) != N || static_cast<Index>(val_labels.size()) != val_inputs.rows())
    throw ConfigError("classifier: one label per row is required");
  if (val_inputs.rows() > 0 && val_inputs.cols() != train_inputs.cols())
    throw ConfigError("classifier: train and validation widths differ");
  const int classes = std::max(2, *std::max_element(train_labels.begin(), train_labels.end()) + 1);
  const Mat<float> targets = one_hot(train_labels, classes);
  one_hot(val_labels, classes);  // range check

  Rng init(cfg.seed, "classifier.init");
  Rng rng(cfg.seed, "classifier.train");
  TrainedClassifier out;
  out.model = Classifier(train_inputs.cols(), classes, cfg, init);
  Classifier& model = out.model;
  model.fit_standardizer(train_inputs);
  const Mat<float> x = model.standardize(train_inputs);
  EmaShadow ema(model.params(), cfg.ema_decay, cfg.ema_warmup);
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  out.eval_weights = ema.values();
  out.best_val_acc = -1.0;

  std::vector<Index> order(static_cast<size_t>(N));
  std::iota(order.begin(), order.end(), Index{0});
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.input_noise));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    Index batches = 0;
    for (Index start = 0; start < N; start += cfg.batch_size) {
      const Index n = std::min(cfg.batch_size, N - start);
      Mat<float> bx(n, x.cols()), by(n, classes);
      for (Index r = 0; r < n; ++r) {
        bx.row(r) = x.row(order[static_cast<size_t>(start + r)]);
        by.row(r) = targets.row(order[static_cast<size_t>(start + r)]);
      }
      if (cfg.input_noise > 0.0)
        for (Index i = 0; i < bx.size(); ++i) bx.data()[i] += noise(rng.engine());
      if (cfg.mixup) {
        MixedBatch m = mixup(bx, by, cfg.mixup_alpha, rng);
        bx = std::move(m.inputs);
        by = std::move(m.targets);
      }
      Tape<float> tape;
      Var<float> loss = softmax_cross_entropy(model.forward(tape, bx, rng), by);
      tape.backward(loss);
      adam_step(model.params(), adam);
      ema.update(model.params());
      loss_sum += loss.value()(0, 0);
      ++batches;
    }
    EpochAccuracy e;
    e.epoch = epoch;
    e.loss = loss_sum / static_cast<double>(batches);
    TrainedClassifier probe;
    probe.model = model;
    probe.eval_weights = ema.values();
    e.train_acc = accuracy(probe.predict(train_inputs), train_labels);
    e.val_acc = val_inputs.rows() > 0 ? accuracy(probe.predict(val_inputs), val_labels) : e.train_acc;
    out.history.push_back(e);
    // Ties favour the later epoch: the EMA is better settled by then.
    if (val_inputs.rows() == 0 || e.val_acc >= out.best_val_acc) {
      out.best_val_acc = e.val_acc;
      out.best_epoch = epoch;
      out.eval_weights = ema.values();
    }
  }
  if (cfg.epochs == 0) {
    out.best_val_acc = val_inputs.rows() > 0 ? accuracy(out.predict(val_inputs), val_labels) : 0.0;
  }
  return out;
}

namespace {

void require_labels(const NuSet& set) {
  for (const auto& z : set.reps)
    if (z.label < 0) throw ConfigError("ν-set '" + set.split + "': signal '" + z.signal_id + "' has no label");
}

}  // namespace

TrainedClassifier train_classifier(const NuSet& train, const NuSet& val, const ClassifierConfig& cfg) {
  val.require_backbone(train.backbone);
  require_labels(train);
  require_labels(val);
  TrainedClassifier out = train_classifier(train.matrix(), train.labels(), val.matrix(), val.labels(), cfg);
  out.backbone = train.backbone;
  return out;
}

double evaluate_classifier(const TrainedClassifier& clf, const Mat<float>& inputs, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != inputs.rows()) throw ConfigError("evaluate_classifier: one label per row");
  for (int l : labels)
    if (l < 0 || l >= clf.model.classes()) throw ConfigError("evaluate_classifier: label out of range");
  return accuracy(clf.predict(inputs), labels);
}

double evaluate_classifier(const TrainedClassifier& clf, const NuSet& test) {
  test.require_backbone(clf.backbone);
  require_labels(test);
  return evaluate_classifier(clf, test.matrix(), test.labels());
}

}  // namespace neomlp
