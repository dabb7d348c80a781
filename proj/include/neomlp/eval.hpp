#pragma once

// Reconstruction reports and dense re-evaluation of fitted fields.

#include "neomlp/baseline.hpp"
#include "neomlp/data.hpp"
#include "neomlp/metrics.hpp"
#include "neomlp/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace neomlp {

struct SignalMetrics {
  std::string id;
  Modality modality = Modality::Image;
  Index points = 0;
  double peak = 1.0;
  double psnr = 0.0;
  std::optional<double> iou;         // voxel signals
  std::optional<double> video_psnr;  // audio-visual signals, peak 1
  std::optional<double> audio_psnr;  // audio-visual signals, peak 2
};

struct MetricReport {
  std::vector<SignalMetrics> signals;
  double mean_psnr = 0.0;  // over signals; infinite entries make it infinite
  std::optional<double> mean_iou;
  Index points = 0;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Per-signal metrics of `pred` (P x O, dataset point order) against the
/// dataset targets. Masked entries are ignored.
MetricReport evaluate(const SignalDataset& ds, const Mat<float>& pred);

/// Field values on the `factor`-times grid of one signal.
Mat<float> reconstruct(const NeoMLP<float>& model, const LatentSet<float>& latents, const SignalInfo& info,
                       Index factor = 1);
Mat<float> reconstruct(const BaselineField& model, const SignalInfo& info, Index factor = 1);

/// Writes `values` (point order of `info`'s grid) to `dir` as raw tensors
/// and human-viewable files. Audio: <id>.f32.wav (float) and <id>.wav
/// (16-bit). Images: <id>.raw and <id>.png. Video: <id>.raw and
/// <id>_frames/. Audio-visual adds <id>_audio.wav. Voxels: <id>.vox.
/// Returns the written paths.
std::vector<std::filesystem::path> write_reconstruction(const std::filesystem::path& dir, const SignalInfo& info,
                                                        const Mat<float>& values);

/// Geometry of a signal evaluated on its `factor`-times grid.
SignalInfo upsampled_info(const SignalInfo& info, Index factor);

}  // namespace neomlp
