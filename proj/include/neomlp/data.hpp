#pragma once

// Flattened (coordinate, value) point store and the per-modality ingestors
// that fill it. Each ingestor has an inverse that reassembles the source
// layout from point order, which is fixed and documented per modality.

#include "neomlp/tensor.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace neomlp {

enum class Modality { Audio, Image, Video, Voxel, AudioVisual };

std::string to_string(Modality m);
Modality parse_modality(std::string_view s);

/// PSNR peak for targets of a modality: audio spans [-1, 1], everything else [0, 1].
double modality_peak(Modality m);

// ---- source containers ---------------------------------------------------

struct AudioClip {
  double sample_rate = 0;
  int channels = 1;
  Mat<double> samples;  // frames x channels, nominally in [-1, 1]

  [[nodiscard]] Index frames() const { return samples.rows(); }
};

/// H x W x C, row-major with interleaved channels, values in [0, 1].
struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 1;
  std::vector<float> data;

  [[nodiscard]] float at(Index y, Index x, Index c) const { return data[static_cast<size_t>((y * width + x) * channels + c)]; }
  float& at(Index y, Index x, Index c) { return data[static_cast<size_t>((y * width + x) * channels + c)]; }
  static Image zeros(Index h, Index w, Index c);
};

/// T x H x W x C frame stack.
struct Video {
  double fps = 25.0;
  std::vector<Image> frames;
};

/// X x Y x Z occupancy, X-major: flat index (x * Y + y) * Z + z.
struct VoxelGrid {
  Index nx = 0, ny = 0, nz = 0;
  std::vector<uint8_t> occupied;

  [[nodiscard]] bool at(Index x, Index y, Index z) const { return occupied[static_cast<size_t>((x * ny + y) * nz + z)] != 0; }
  static VoxelGrid empty(Index nx, Index ny, Index nz);
};

// ---- point store ---------------------------------------------------------

struct SignalInfo {
  std::string id;
  Modality modality = Modality::Image;
  std::vector<Index> shape;  // modality-specific, see ingestors
  int label = -1;
  Index offset = 0;          // first point in the dataset
  Index count = 0;           // P_n
  double time_scale = 1.0;
  double amplitude_scale = 1.0;  // audio: max |sample| divided out at ingest
  int video_channels = 0;        // audio-visual split of the output dims
  double sample_rate = 0.0;      // audio and audio-visual signals
  double fps = 0.0;              // video and audio-visual signals
};

/// Points of one or more signals sharing input and output widths.
struct SignalDataset {
  int input_dims = 0;
  int output_dims = 0;
  Mat<float> coords;   // P x I
  Mat<float> targets;  // P x O, masked entries stored as zero
  Mat<float> mask;     // P x O, 1 where the entry contributes to the loss
  std::vector<Index> signal_of_point;
  std::vector<SignalInfo> signals;

  [[nodiscard]] Index num_points() const { return coords.rows(); }
  [[nodiscard]] Index num_signals() const { return static_cast<Index>(signals.size()); }

  /// Appends another dataset's signals (widths must agree).
  void append(const SignalDataset& other);
  /// Signals at the given positions, re-indexed from zero.
  [[nodiscard]] SignalDataset subset(const std::vector<Index>& signal_positions) const;
  [[nodiscard]] std::vector<int> labels() const;
  /// Dataset-level PSNR peak (largest over the signals present).
  [[nodiscard]] double peak() const;
  void validate() const;
};

/// Affine map of [0, t_max] onto [-scale, scale]; t_max == 0 maps to 0.
double rescale_time(double t_raw, double t_max, double scale);
double unscale_time(double t, double t_max, double scale);

/// Endpoint-inclusive uniform grid on [-1, 1] with n nodes (n == 1 gives 0).
double grid_coord(Index i, Index n);

SignalDataset ingest_audio(const AudioClip& clip, double time_scale = 100.0, std::string id = "audio");
SignalDataset ingest_image(const Image& img, std::string id = "image");
SignalDataset ingest_video(const Video& video, double time_scale = 1.0, std::string id = "video");
SignalDataset ingest_audiovisual(const Video& video, const AudioClip& audio, double time_scale = 100.0,
                                 std::string id = "audiovisual");
SignalDataset ingest_voxel(const VoxelGrid& grid, std::string id = "voxel");

// Inverses: rebuild the source layout from one signal's targets (P_n x O, in
// point order). Audio comes back amplitude-normalised.
AudioClip reassemble_audio(const SignalInfo& info, const Mat<float>& values);
Image reassemble_image(const SignalInfo& info, const Mat<float>& values);
Video reassemble_video(const SignalInfo& info, const Mat<float>& values);
VoxelGrid reassemble_voxel(const SignalInfo& info, const Mat<float>& values, float threshold = 0.5f);

/// Rows of `values` belonging to signal n.
Mat<float> signal_rows(const SignalDataset& ds, Index n, const Mat<float>& values);

/// Dense evaluation grid with `factor` times the native node count along
/// every spatial axis and, for audio, the sample axis; video frames and the
/// audio track of audio-visual signals keep their native rate. The range is
/// unchanged and factor 1 reproduces the ingest grid.
Mat<float> upsampled_grid(const SignalInfo& info, Index factor);

}  // namespace neomlp
