#pragma once

// File formats for signal sources and a manifest that ties them together.
// Every binary value is little-endian.

#include "neomlp/data.hpp"
#include "neomlp/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace neomlp {

enum class WavEncoding { Pcm16, Pcm24, Float32 };

AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding enc = WavEncoding::Pcm16);

/// PNG in any colour type; 16-bit samples are reduced to 8 bits, values
/// scaled to [0, 1].
Image read_png(const std::filesystem::path& path);
/// 8-bit PNG with 1, 2, 3 or 4 channels; values clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Image& img);

// Raw planar dumps: C planes of H x W (or T x C planes for video) with a
// JSON sidecar "<path>.json" holding {"frames", "height", "width",
// "channels", "dtype": "uint8" | "float32", "fps"}.
Image read_raw_image(const std::filesystem::path& path);
void write_raw_image(const std::filesystem::path& path, const Image& img);
Video read_raw_video(const std::filesystem::path& path);
void write_raw_video(const std::filesystem::path& path, const Video& video);

/// Frame stack from a raw dump or a directory of PNG frames (sorted by name).
Video read_video(const std::filesystem::path& path, double fps = 25.0);

// Voxel files: header of three uint16 extents (X, Y, Z) and a reserved
// uint16, then X*Y*Z occupancy bits in X-major order, least significant bit
// first within each byte.
VoxelGrid read_voxel(const std::filesystem::path& path);
void write_voxel(const std::filesystem::path& path, const VoxelGrid& grid);

struct ManifestEntry {
  std::string id;
  Modality modality = Modality::Image;
  std::filesystem::path path;
  std::filesystem::path audio_path;  // audio-visual entries only
  std::optional<int> label;
  std::optional<double> fps;
  std::optional<double> time_scale;
  int augmentations = 0;  // image entries: extra flipped/cropped copies
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;
};

/// JSON manifest: an array of entries or {"signals": [...]}. Relative paths
/// resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Ingests every entry (augmentations expanded) into one dataset.
SignalDataset ingest_manifest(const Manifest& manifest, uint64_t seed = 0);

/// Horizontal flip with probability 1/2, then a random crop of the
/// zero-padded image back to the original size.
Image augment_image(const Image& img, Rng& rng, Index pad = 4);

/// Replaces every image entry with `copies + 1` images: the original and
/// `copies` augmented variants ("<id>#aug<k>"), all sharing the label.
struct LabeledImage {
  std::string id;
  Image image;
  int label = -1;
};
std::vector<LabeledImage> expand_augmentations(const std::vector<LabeledImage>& images, int copies, Rng& rng);

// Atomic file replacement: write to a sibling temp file, then rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace neomlp
