// neof: fit, finetune, reconstruct, eval, classify, verify, synth, compare.

#include "neomlp/baseline.hpp"
#include "neomlp/downstream.hpp"
#include "neomlp/error.hpp"
#include "neomlp/eval.hpp"
#include "neomlp/field.hpp"
#include "neomlp/io.hpp"
#include "neomlp/runtime.hpp"
#include "neomlp/store.hpp"
#include "neomlp/synth.hpp"
#include "neomlp/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace neomlp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Raised when a run completed but missed a requested threshold.
class ThresholdMiss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
  bool quiet = false;
  json file = json::object();

  void load() {
    if (config_path.empty()) return;
    const std::string text = read_file(config_path);
    try {
      file = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("config '" + config_path + "': " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config '" + config_path + "': top level must be an object");
  }

  [[nodiscard]] uint64_t resolved_seed() const {
    if (seed) return *seed;
    return file.value("seed", uint64_t{0});
  }

  [[nodiscard]] json section(const char* name) const {
    auto it = file.find(name);
    return it == file.end() ? json::object() : *it;
  }
};

template <class T>
void apply(T& dst, const std::optional<T>& src) {
  if (src) dst = *src;
}

struct ModelFlags {
  std::optional<int> hidden_nodes, token_dim, layers, heads, ffn_hidden, d_rff;
  std::optional<std::string> attention, activation;
  std::optional<double> rff_sigma, latent_variance;
  bool no_rff = false;
  bool allow_degenerate = false;

  void add(CLI::App& app) {
    app.add_option("--hidden-nodes", hidden_nodes, "Hidden node count H");
    app.add_option("--token-dim", token_dim, "Token width D");
    app.add_option("--layers", layers, "NeoMLP layers L");
    app.add_option("--heads", heads, "Attention heads");
    app.add_option("--ffn-hidden", ffn_hidden, "Feed-forward hidden width");
    app.add_option("--attention", attention, "softmax or linear");
    app.add_option("--activation", activation, "silu or gelu");
    app.add_option("--d-rff", d_rff, "Random Fourier feature count");
    app.add_option("--rff-sigma", rff_sigma, "RFF frequency standard deviation");
    app.add_option("--latent-variance", latent_variance, "Variance of fresh latents");
    app.add_flag("--no-rff", no_rff, "Feed raw coordinates instead of Fourier features");
    app.add_flag("--allow-degenerate", allow_degenerate, "Permit H = 0 or L = 0");
  }

  ModelConfig resolve(const Common& c, const SignalDataset& ds) const {
    ModelConfig m = c.section("model").get<ModelConfig>();
    apply(m.hidden_nodes, hidden_nodes);
    apply(m.token_dim, token_dim);
    apply(m.layers, layers);
    apply(m.heads, heads);
    apply(m.ffn_hidden, ffn_hidden);
    apply(m.d_rff, d_rff);
    apply(m.rff_sigma, rff_sigma);
    apply(m.latent_variance, latent_variance);
    if (attention) m.attention = parse_attention(*attention);
    if (activation) m.ffn_activation = parse_activation(*activation);
    if (no_rff) m.use_rff = false;
    m.input_dims = ds.input_dims;
    m.output_dims = ds.output_dims;
    m.validate();
    if (m.degenerate()) {
      std::cerr << "warning: degenerate model (H = " << m.hidden_nodes << ", L = " << m.layers << ")\n";
      if (!allow_degenerate) throw UsageError("degenerate configurations need --allow-degenerate");
    }
    return m;
  }
};

struct TrainFlags {
  std::optional<int> epochs;
  std::optional<Index> batch_points;
  std::optional<double> lr, lr_final, fraction, budget;
  std::optional<std::string> schedule;
  std::string metrics;

  void add(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--batch-points", batch_points, "Points per batch");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--schedule", schedule, "constant or cosine");
    app.add_option("--lr-final", lr_final, "Cosine floor as a fraction of --lr");
    app.add_option("--epoch-fraction", fraction, "Fraction of the point pool per epoch");
    app.add_option("--time-budget", budget, "Wall-clock limit in seconds (0 = none)");
    app.add_option("--metrics", metrics, "Append per-epoch JSON lines here");
  }

  FitConfig resolve(const Common& c, const char* section) const {
    FitConfig f = c.section(section).get<FitConfig>();
    apply(f.epochs, epochs);
    apply(f.batch_points, batch_points);
    apply(f.lr, lr);
    apply(f.lr_final_factor, lr_final);
    apply(f.epoch_point_fraction, fraction);
    apply(f.time_budget_seconds, budget);
    if (schedule) f.schedule = parse_lr_schedule(*schedule);
    f.seed = c.resolved_seed();
    f.metrics_path = metrics;
    f.log = c.quiet ? nullptr : &std::cerr;
    f.validate();
    return f;
  }
};

void emit(const json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (!path.empty()) write_file_atomic(path, text);
  std::cout << text;
}

SignalDataset load_dataset(const std::string& manifest, uint64_t seed) {
  return ingest_manifest(read_manifest(manifest), seed);
}

Digest checkpoint_fingerprint(const Checkpoint& ck) { return backbone_fingerprint(ck.model, ck.run); }

// ν-reps reordered to the dataset's signal order.
std::vector<LatentSet<float>> match_reps(const NuSet& set, const SignalDataset& ds) {
  std::map<std::string, const LatentSet<float>*> by_id;
  for (const auto& z : set.reps) by_id[z.signal_id] = &z;
  std::vector<LatentSet<float>> out;
  out.reserve(ds.signals.size());
  for (const auto& info : ds.signals) {
    auto it = by_id.find(info.id);
    if (it == by_id.end()) throw ConfigError("ν-set '" + set.split + "' has no rep for signal '" + info.id + "'");
    out.push_back(*it->second);
  }
  return out;
}

ManifestEntry entry(std::string id, Modality modality, fs::path path) {
  ManifestEntry e;
  e.id = std::move(id);
  e.modality = modality;
  e.path = std::move(path);
  return e;
}

json db(double v) { return std::isinf(v) ? json("inf") : json(v); }

// ---- fit -------------------------------------------------------------------

struct FitCmd {
  std::string manifest, output, latents_out, report;
  ModelFlags model;
  TrainFlags train;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "Signal manifest")->required();
    app.add_option("-o,--output", output, "Checkpoint to write")->required();
    app.add_option("--save-latents", latents_out, "Also write the fitting latents as a ν-set");
    app.add_option("--report", report, "Write the JSON summary here too");
    model.add(app);
    train.add(app);
  }

  int run(const Common& c) const {
    const uint64_t seed = c.resolved_seed();
    const SignalDataset ds = load_dataset(manifest, seed);
    const ModelConfig mcfg = model.resolve(c, ds);
    const FitConfig fcfg = train.resolve(c, "fit");
    Rng init(seed, "init");
    NeoMLP<float> net(mcfg, init);
    const FitResult res = fit(ds, net, fcfg);

    const json run = {{"command", "fit"},
                      {"seed", seed},
                      {"manifest", manifest},
                      {"deterministic", c.deterministic},
                      {"fit", fcfg}};
    save_checkpoint(output, net, run);
    const Digest fp = backbone_fingerprint(net, run);
    if (!latents_out.empty()) {
      NuSet set{fp, "fit", mcfg.hidden_nodes, mcfg.output_dims, mcfg.token_dim, res.latents};
      save_nuset(latents_out, set);
    }
    const MetricReport metrics = evaluate(ds, predict_dataset(net, ds, res.latents));
    emit({{"checkpoint", output},
          {"fingerprint", to_hex(fp)},
          {"parameters", mcfg.parameter_count()},
          {"signals", ds.num_signals()},
          {"points", ds.num_points()},
          {"epochs", res.history.size()},
          {"steps", res.steps},
          {"stopped_early", res.stopped_early},
          {"final_loss", res.final_loss()},
          {"psnr", db(metrics.mean_psnr)},
          {"seconds", res.seconds}},
         report);
    return 0;
  }
};

// ---- finetune --------------------------------------------------------------

struct FinetuneCmd {
  std::string manifest, checkpoint, split = "test", output, report;
  TrainFlags train;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "Signal manifest of the split")->required();
    app.add_option("--checkpoint", checkpoint, "Frozen backbone")->required();
    app.add_option("--split", split, "Split name stored in the ν-set");
    app.add_option("-o,--output", output, "ν-set to write")->required();
    app.add_option("--report", report, "Write the JSON summary here too");
    train.add(app);
  }

  int run(const Common& c) const {
    const uint64_t seed = c.resolved_seed();
    const Checkpoint ck = load_checkpoint(checkpoint);
    const SignalDataset ds = load_dataset(manifest, seed);
    const FitConfig fcfg = train.resolve(c, "finetune");
    const FitResult res = finetune(ds, ck.model, fcfg);
    const ModelConfig& m = ck.model.config();
    const NuSet set{checkpoint_fingerprint(ck), split, m.hidden_nodes, m.output_dims, m.token_dim, res.latents};
    save_nuset(output, set);
    const MetricReport metrics = evaluate(ds, predict_dataset(ck.model, ds, res.latents));
    emit({{"nuset", output},
          {"split", split},
          {"backbone", to_hex(set.backbone)},
          {"signals", set.size()},
          {"epochs", res.history.size()},
          {"steps", res.steps},
          {"final_loss", res.final_loss()},
          {"psnr", db(metrics.mean_psnr)},
          {"seconds", res.seconds},
          {"config", fcfg}},
         report);
    return 0;
  }
};

// ---- eval / reconstruct ----------------------------------------------------

struct EvalCmd {
  std::string manifest, checkpoint, nuset, report;
  std::optional<double> min_psnr;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "Signal manifest the ν-set was finetuned on")->required();
    app.add_option("--checkpoint", checkpoint, "Backbone")->required();
    app.add_option("--nuset", nuset, "ν-set bound to the backbone")->required();
    app.add_option("--report", report, "Write the MetricReport here too");
    app.add_option("--min-psnr", min_psnr, "Exit 1 if the mean PSNR falls below this");
  }

  int run(const Common& c) const {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const NuSet set = load_nuset(nuset);
    set.require_backbone(checkpoint_fingerprint(ck));
    const SignalDataset ds = load_dataset(manifest, c.resolved_seed());
    const MetricReport r = evaluate(ds, predict_dataset(ck.model, ds, match_reps(set, ds)));
    emit(r.to_json(), report);
    if (min_psnr && !(r.mean_psnr >= *min_psnr))
      throw ThresholdMiss("mean PSNR " + format_db(r.mean_psnr) + " dB is below " + format_db(*min_psnr) + " dB");
    return 0;
  }
};

struct ReconstructCmd {
  std::string manifest, checkpoint, nuset, out_dir;
  Index factor = 1;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "Signal manifest (geometry of each signal)")->required();
    app.add_option("--checkpoint", checkpoint, "Backbone")->required();
    app.add_option("--nuset", nuset, "ν-set bound to the backbone")->required();
    app.add_option("--out-dir", out_dir, "Output directory")->required();
    app.add_option("--factor", factor, "Grid refinement per spatial or temporal axis")->check(CLI::PositiveNumber);
  }

  int run(const Common& c) const {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const NuSet set = load_nuset(nuset);
    set.require_backbone(checkpoint_fingerprint(ck));
    const SignalDataset ds = load_dataset(manifest, c.resolved_seed());
    const auto reps = match_reps(set, ds);
    fs::create_directories(out_dir);
    json files = json::array();
    for (size_t n = 0; n < ds.signals.size(); ++n) {
      const SignalInfo& info = ds.signals[n];
      const Mat<float> values = reconstruct(ck.model, reps[n], info, factor);
      json written = json::array();
      for (const auto& p : write_reconstruction(out_dir, upsampled_info(info, factor), values))
        written.push_back(p.string());
      files.push_back({{"id", info.id}, {"points", values.rows()}, {"files", written}});
    }
    emit({{"factor", factor}, {"signals", files}}, "");
    return 0;
  }
};

// ---- classify ----------------------------------------------------------------

struct ClassifyCmd {
  std::string train_path, val_path, test_path, report;
  std::optional<int> epochs, layers, hidden;
  std::optional<double> lr, dropout, weight_decay, input_noise, mixup_alpha, ema_decay;
  std::optional<Index> batch_size;
  std::optional<double> min_accuracy;
  bool no_mixup = false;

  void add(CLI::App& app) {
    app.add_option("--train", train_path, "Training ν-set")->required();
    app.add_option("--val", val_path, "Validation ν-set (selects the evaluated epoch)");
    app.add_option("--test", test_path, "Test ν-set")->required();
    app.add_option("--report", report, "Write the JSON report here too");
    app.add_option("--epochs", epochs, "Classifier epochs");
    app.add_option("--layers", layers, "Linear layers including the output layer");
    app.add_option("--hidden", hidden, "Hidden width");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--batch-size", batch_size, "Minibatch size");
    app.add_option("--dropout", dropout, "Dropout rate");
    app.add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app.add_option("--input-noise", input_noise, "Gaussian input noise std");
    app.add_option("--mixup-alpha", mixup_alpha, "Mixup Beta(alpha, alpha)");
    app.add_flag("--no-mixup", no_mixup, "Disable mixup");
    app.add_option("--ema-decay", ema_decay, "EMA decay (0 evaluates raw weights)");
    app.add_option("--min-accuracy", min_accuracy, "Exit 1 if test accuracy falls below this");
  }

  int run(const Common& c) const {
    ClassifierConfig cfg = c.section("classifier").get<ClassifierConfig>();
    apply(cfg.epochs, epochs);
    apply(cfg.layers, layers);
    apply(cfg.hidden, hidden);
    apply(cfg.lr, lr);
    apply(cfg.batch_size, batch_size);
    apply(cfg.dropout, dropout);
    apply(cfg.weight_decay, weight_decay);
    apply(cfg.input_noise, input_noise);
    apply(cfg.mixup_alpha, mixup_alpha);
    apply(cfg.ema_decay, ema_decay);
    if (no_mixup) cfg.mixup = false;
    cfg.seed = c.resolved_seed();
    cfg.validate();

    const NuSet train = load_nuset(train_path);
    const NuSet test = load_nuset(test_path);
    test.require_backbone(train.backbone);
    std::optional<NuSet> val;
    TrainedClassifier clf;
    if (!val_path.empty()) {
      val = load_nuset(val_path);
      clf = train_classifier(train, *val, cfg);
    } else {
      clf = train_classifier(train.matrix(), train.labels(), Mat<float>(0, train.matrix().cols()), {}, cfg);
      clf.backbone = train.backbone;
    }
    const double test_acc = evaluate_classifier(clf, test);
    json r = {{"train_acc", evaluate_classifier(clf, train)},
              {"val_acc", val ? json(evaluate_classifier(clf, *val)) : json(nullptr)},
              {"test_acc", test_acc},
              {"epochs", cfg.epochs},
              {"best_epoch", clf.best_epoch},
              {"config", cfg}};
    emit(r, report);
    if (min_accuracy && test_acc < *min_accuracy) throw ThresholdMiss("test accuracy below threshold");
    return 0;
  }
};

// ---- verify ----------------------------------------------------------------

struct VerifyCmd {
  std::string which = "all", report;
  bool fast = false, inject_fault = false;

  void add(CLI::App& app) {
    app.add_option("suite", which, "all, symmetry, grad or oracle")
        ->check(CLI::IsMember({"all", "symmetry", "grad", "oracle"}));
    app.add_flag("--fast", fast, "Fewer random models and seeds");
    app.add_flag("--inject-fault", inject_fault, "Corrupt one attention weight after the oracle fixture is built");
    app.add_option("--report", report, "Write the JSON report here too");
  }

  int run(const Common& c) const {
    VerifyOptions opts;
    opts.seed = c.resolved_seed();
    opts.fast = fast;
    opts.inject_fault = inject_fault;
    const VerifyReport r = run_verify(which, opts);
    if (!c.quiet) {
      for (const auto& s : r.suites)
        std::cerr << (s.ok ? "ok   " : "FAIL ") << s.name << "  max error " << s.max_error << " (tolerance "
                  << s.tolerance << ", " << std::fixed << std::setprecision(2) << s.seconds << " s)\n"
                  << std::defaultfloat << std::setprecision(6);
    }
    emit(r.to_json(), report);
    return r.ok() ? 0 : 1;
  }
};

// ---- synth -----------------------------------------------------------------

struct SynthCmd {
  std::string kind, out_dir;
  double sample_rate = 8000.0, seconds = 1.0, fps = 8.0;
  int tones = 5, classes = 2, audio_channels = 1;
  Index size = 64, frames = 8, height = 16, width = 16;
  int train = 500, val = 100, test = 100;

  void add(CLI::App& app) {
    app.add_option("kind", kind, "audio, image, digits, video, audiovisual or voxel")
        ->required()
        ->check(CLI::IsMember({"audio", "image", "digits", "video", "audiovisual", "voxel"}));
    app.add_option("--out-dir", out_dir, "Output directory")->required();
    app.add_option("--sample-rate", sample_rate, "Audio sample rate (Hz)");
    app.add_option("--seconds", seconds, "Audio duration");
    app.add_option("--tones", tones, "Sinusoids in the audio clip");
    app.add_option("--size", size, "Image or voxel edge length");
    app.add_option("--classes", classes, "Digit classes (0 .. classes-1)");
    app.add_option("--train", train, "Training digits");
    app.add_option("--val", val, "Validation digits");
    app.add_option("--test", test, "Test digits");
    app.add_option("--frames", frames, "Video frames");
    app.add_option("--height", height, "Video height");
    app.add_option("--width", width, "Video width");
    app.add_option("--fps", fps, "Video frame rate");
    app.add_option("--audio-channels", audio_channels, "Audio channels of the audio-visual clip");
  }

  int run(const Common& c) const {
    const uint64_t seed = c.resolved_seed();
    const fs::path dir = out_dir;
    fs::create_directories(dir);
    Rng rng(seed, "synth");
    json manifests = json::object();
    auto single = [&](ManifestEntry e) {
      Manifest m;
      m.entries.push_back(std::move(e));
      write_manifest(dir / "manifest.json", m);
      manifests["manifest"] = (dir / "manifest.json").string();
    };
    if (kind == "audio") {
      write_wav(dir / "tones.wav", synth_tones(random_tones(tones, 50.0, 1500.0, rng), sample_rate, seconds),
                WavEncoding::Float32);
      single(entry("tones", Modality::Audio, "tones.wav"));
    } else if (kind == "image") {
      write_png(dir / "checkerboard.png", checkerboard_texture(size, rng));
      single(entry("checkerboard", Modality::Image, "checkerboard.png"));
    } else if (kind == "video") {
      write_raw_video(dir / "clip.raw", synth_video(frames, height, width, fps, rng));
      ManifestEntry e = entry("clip", Modality::Video, "clip.raw");
      e.fps = fps;
      single(e);
    } else if (kind == "audiovisual") {
      const AudioVisualClip av = synth_audiovisual(frames, height, width, fps, sample_rate, audio_channels, rng);
      write_raw_video(dir / "av.raw", av.video);
      write_wav(dir / "av.wav", av.audio, WavEncoding::Float32);
      ManifestEntry e = entry("av", Modality::AudioVisual, "av.raw");
      e.audio_path = "av.wav";
      e.fps = fps;
      single(e);
    } else if (kind == "voxel") {
      write_voxel(dir / "sphere.vox", sphere_voxels(size, 0.6));
      single(entry("sphere", Modality::Voxel, "sphere.vox"));
    } else {
      if (classes < 1 || classes > 10) throw UsageError("--classes must be in [1, 10]");
      const std::pair<const char*, int> splits[] = {{"train", train}, {"val", val}, {"test", test}};
      for (const auto& [name, count] : splits) {
        Manifest m;
        fs::create_directories(dir / name);
        for (int i = 0; i < count; ++i) {
          const int digit = i % classes;
          char file[64];
          std::snprintf(file, sizeof file, "%s/%05d.png", name, i);
          write_png(dir / file, synth_digit(digit, rng));
          ManifestEntry e = entry(std::string(name) + "_" + std::to_string(i), Modality::Image, file);
          e.label = digit;
          m.entries.push_back(std::move(e));
        }
        write_manifest(dir / (std::string(name) + ".json"), m);
        manifests[name] = (dir / (std::string(name) + ".json")).string();
      }
    }
    emit(manifests, "");
    return 0;
  }
};

// ---- compare ---------------------------------------------------------------

struct CompareCmd {
  std::string manifest, report;
  ModelFlags model;
  TrainFlags train;
  double siren_lr = 1e-4, rffnet_lr = 1e-3;
  int baseline_layers = 5, baseline_width = 256;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "Single-signal manifest")->required();
    app.add_option("--report", report, "Write the JSON table here too");
    app.add_option("--siren-lr", siren_lr, "Siren learning rate");
    app.add_option("--rffnet-lr", rffnet_lr, "RFFNet learning rate");
    app.add_option("--baseline-layers", baseline_layers, "Baseline linear layers");
    app.add_option("--baseline-width", baseline_width, "Baseline hidden width");
    model.add(app);
    train.add(app);
  }

  int run(const Common& c) const {
    const uint64_t seed = c.resolved_seed();
    const SignalDataset ds = load_dataset(manifest, seed);
    if (ds.num_signals() != 1) throw UsageError("compare fits one signal; the manifest lists " +
                                                std::to_string(ds.num_signals()));
    const ModelConfig mcfg = model.resolve(c, ds);
    const FitConfig fcfg = train.resolve(c, "fit");

    json rows = json::array();
    auto row = [&](const std::string& name, long params, const FitResult& res, double psnr) {
      rows.push_back({{"model", name}, {"parameters", params}, {"psnr", db(psnr)}, {"steps", res.steps},
                      {"seconds", res.seconds}});
    };
    {
      Rng init(seed, "init");
      NeoMLP<float> net(mcfg, init);
      const FitResult res = fit(ds, net, fcfg);
      row("neomlp", mcfg.parameter_count(), res, evaluate(ds, predict_dataset(net, ds, res.latents)).mean_psnr);
    }
    const json bsec = c.section("baseline");
    for (const auto& [kind, lr] : {std::pair{BaselineKind::Siren, siren_lr}, std::pair{BaselineKind::RFFNet, rffnet_lr}}) {
      BaselineConfig b = bsec.value(to_string(kind), json::object()).get<BaselineConfig>();
      b.kind = kind;
      b.input_dims = ds.input_dims;
      b.output_dims = ds.output_dims;
      b.layers = baseline_layers;
      b.width = baseline_width;
      FitConfig f = fcfg;
      f.lr = lr;
      BaselineField field = build_baseline(b, seed);
      const FitResult res = fit_baseline(ds, field, f);
      row(to_string(kind), b.parameter_count(), res, evaluate(ds, field.predict(ds.coords)).mean_psnr);
    }
    std::ostringstream table;
    table << std::left << std::setw(8) << "model" << std::right << std::setw(12) << "params" << std::setw(12)
          << "psnr (dB)" << std::setw(10) << "steps" << std::setw(10) << "seconds" << "\n";
    for (const auto& r : rows) {
      const std::string psnr = r["psnr"].is_string() ? "inf" : format_db(r["psnr"].get<double>());
      table << std::left << std::setw(8) << r["model"].get<std::string>() << std::right << std::setw(12)
            << r["parameters"].get<long>() << std::setw(12) << psnr << std::setw(10) << r["steps"].get<long>()
            << std::setw(10) << std::fixed << std::setprecision(1) << r["seconds"].get<double>() << "\n"
            << std::defaultfloat;
    }
    std::cerr << table.str();
    emit({{"signal", ds.signals[0].id}, {"rows", rows}}, report);
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeoMLP neural fields: fit, finetune, reconstruct, evaluate, classify, verify"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "JSON config; flags override its keys");
  app.add_option("--seed", common.seed, "Root seed for every random stream");
  app.add_flag("--deterministic", common.deterministic, "Single-threaded, fixed reduction order");
  app.add_option("--threads", common.threads, "Worker threads (default NEOF_THREADS, then all cores)");
  app.add_flag("-q,--quiet", common.quiet, "No per-epoch telemetry on stderr");

  FitCmd fit_cmd;
  FinetuneCmd finetune_cmd;
  EvalCmd eval_cmd;
  ReconstructCmd reconstruct_cmd;
  ClassifyCmd classify_cmd;
  VerifyCmd verify_cmd;
  SynthCmd synth_cmd;
  CompareCmd compare_cmd;
  std::vector<std::pair<CLI::App*, std::function<int(const Common&)>>> commands;
  auto add = [&](auto& cmd, const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.add(*sub);
    commands.emplace_back(sub, [&cmd](const Common& c) { return cmd.run(c); });
  };
  add(fit_cmd, "fit", "Fit a backbone and per-signal latents to a manifest");
  add(finetune_cmd, "finetune", "Fit fresh latents against a frozen backbone and write a ν-set");
  add(reconstruct_cmd, "reconstruct", "Evaluate ν-reps on a dense grid and write signals");
  add(eval_cmd, "eval", "PSNR / IoU of a ν-set against its source signals");
  add(classify_cmd, "classify", "Train and test a classifier on ν-sets");
  add(verify_cmd, "verify", "Symmetry, gradient and attention-oracle self-checks");
  add(synth_cmd, "synth", "Write procedural signals and manifests");
  add(compare_cmd, "compare", "NeoMLP vs. Siren vs. RFFNet on one signal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    common.load();
    if (common.threads < 0) throw UsageError("--threads must be positive");
    configure_runtime({common.threads, common.deterministic});
    for (auto& [sub, run] : commands)
      if (sub->parsed()) return run(common);
    return 2;
  } catch (const ThresholdMiss& e) {
    std::cerr << "neof: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "neof: diverged: " << e.what() << "\n";
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "neof: contract violation: " << e.what() << "\n";
    return 1;
  } catch (const FingerprintMismatch& e) {
    std::cerr << "neof: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "neof: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "neof: bad configuration value: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "neof: internal error: " << e.what() << "\n";
    return 1;
  }
}
