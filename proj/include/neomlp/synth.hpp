#pragma once

// Procedural signals used by the tests, the acceptance harness and the
// `synth` subcommand. All generators are deterministic given the Rng state.

#include "neomlp/data.hpp"
#include "neomlp/rng.hpp"

#include <vector>

namespace neomlp {

struct Tone {
  double frequency;  // Hz
  double amplitude;
  double phase;      // radians
};

AudioClip synth_tones(const std::vector<Tone>& tones, double sample_rate, double seconds, int channels = 1);

/// `count` tones with log-uniform frequencies in [fmin, fmax], random
/// amplitudes in [0.2, 1] and phases.
std::vector<Tone> random_tones(int count, double fmin, double fmax, Rng& rng);

/// Fine checkerboard (period `cell` * 2 pixels) blended with band-limited
/// random texture; values in [0, 1], single channel.
Image checkerboard_texture(Index size, Rng& rng, Index cell = 2);

/// 28 x 28 grey handwritten-style digit 0-9 drawn from stroke templates
/// with random affine jitter and stroke width.
Image synth_digit(int digit, Rng& rng, Index size = 28);

/// A small RGB clip of a coloured blob moving across a gradient background.
Video synth_video(Index frames, Index height, Index width, double fps, Rng& rng);

/// Audio-visual pair covering the same time span.
struct AudioVisualClip {
  Video video;
  AudioClip audio;
};
AudioVisualClip synth_audiovisual(Index frames, Index height, Index width, double fps, double sample_rate,
                                  int audio_channels, Rng& rng);

VoxelGrid sphere_voxels(Index n, double radius);

}  // namespace neomlp
