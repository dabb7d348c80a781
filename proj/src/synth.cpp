#include "neomlp/synth.hpp"

#include "neomlp/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace neomlp {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

AudioClip synth_tones(const std::vector<Tone>& tones, double sample_rate, double seconds, int channels) {
  if (!(sample_rate > 0.0) || !(seconds > 0.0) || channels < 1) throw ConfigError("synth_tones: bad arguments");
  const auto frames = static_cast<Index>(std::llround(sample_rate * seconds));
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.channels = channels;
  clip.samples = Mat<double>::Zero(frames, channels);
  for (Index k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) / sample_rate;
    double v = 0.0;
    for (const Tone& tone : tones) v += tone.amplitude * std::sin(kTwoPi * tone.frequency * t + tone.phase);
    // Later channels get a slowly varying gain so they are not identical.
    for (int c = 0; c < channels; ++c) clip.samples(k, c) = v * (1.0 - 0.1 * c * std::sin(kTwoPi * 0.5 * t));
  }
  const double peak = clip.samples.cwiseAbs().maxCoeff();
  if (peak > 0.0) clip.samples /= peak;
  return clip;
}

std::vector<Tone> random_tones(int count, double fmin, double fmax, Rng& rng) {
  std::vector<Tone> tones;
  for (int i = 0; i < count; ++i) {
    const double f = std::exp(rng.uniform(std::log(fmin), std::log(fmax)));
    tones.push_back({f, rng.uniform(0.2, 1.0), rng.uniform(0.0, kTwoPi)});
  }
  return tones;
}

Image checkerboard_texture(Index size, Rng& rng, Index cell) {
  Image img = Image::zeros(size, size, 1);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 8; ++i)
    waves.push_back({rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0), rng.uniform(0.0, kTwoPi), rng.uniform(0.5, 1.0)});
  double amp_sum = 0.0;
  for (const auto& w : waves) amp_sum += w.amp;
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double checker = ((x / cell + y / cell) % 2 == 0) ? 1.0 : -1.0;
      double tex = 0.0;
      const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
      for (const auto& w : waves) tex += w.amp * std::sin(kTwoPi * (w.fx * u + w.fy * v) + w.phase);
      tex /= amp_sum;
      img.at(y, x, 0) = static_cast<float>(std::clamp(0.5 + 0.3 * checker + 0.2 * tex, 0.0, 1.0));
    }
  }
  return img;
}

namespace {

using Pt = std::array<double, 2>;
using Stroke = std::vector<Pt>;

Stroke ellipse(double cx, double cy, double rx, double ry, int n = 24) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = kTwoPi * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

// Stroke templates on the unit square, x to the right and y downward.
std::vector<Stroke> digit_strokes(int d) {
  switch (d) {
    case 0: return {ellipse(0.5, 0.5, 0.24, 0.38)};
    case 1: return {{{0.5, 0.1}, {0.5, 0.9}}, {{0.35, 0.25}, {0.5, 0.1}}};
    case 2: return {{{0.25, 0.3}, {0.35, 0.15}, {0.55, 0.1}, {0.72, 0.2}, {0.72, 0.38}, {0.25, 0.9}, {0.78, 0.9}}};
    case 3: return {{{0.25, 0.15}, {0.7, 0.15}, {0.45, 0.45}, {0.7, 0.6}, {0.68, 0.82}, {0.45, 0.9}, {0.25, 0.82}}};
    case 4: return {{{0.65, 0.9}, {0.65, 0.1}, {0.2, 0.65}, {0.8, 0.65}}};
    case 5:
      return {{{0.72, 0.12}, {0.3, 0.12}, {0.28, 0.45}, {0.55, 0.42}, {0.72, 0.58}, {0.68, 0.82}, {0.45, 0.9},
               {0.25, 0.82}}};
    case 6:
      return {{{0.68, 0.12}, {0.4, 0.3}, {0.28, 0.6}, {0.35, 0.85}, {0.6, 0.88}, {0.7, 0.68}, {0.55, 0.52},
               {0.3, 0.6}}};
    case 7: return {{{0.2, 0.12}, {0.8, 0.12}, {0.45, 0.9}}};
    case 8: return {ellipse(0.5, 0.3, 0.18, 0.18), ellipse(0.5, 0.7, 0.22, 0.2)};
    case 9: return {ellipse(0.5, 0.33, 0.2, 0.2), {{0.7, 0.35}, {0.6, 0.9}}};
    default: throw ConfigError("synth_digit: digit must be 0-9");
  }
}

double segment_distance(const Pt& p, const Pt& a, const Pt& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = p[0] - a[0], wy = p[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Image synth_digit(int digit, Rng& rng, Index size) {
  std::vector<Stroke> strokes = digit_strokes(digit);
  const double s = static_cast<double>(size);
  const double scale = rng.uniform(0.75, 0.95) * s;
  const double rot = rng.uniform(-0.2, 0.2);
  const double shear = rng.uniform(-0.2, 0.2);
  const double tx = rng.uniform(-1.5, 1.5), ty = rng.uniform(-1.5, 1.5);
  const double half_width = rng.uniform(1.0, 1.8);
  const double c = std::cos(rot), sn = std::sin(rot);
  for (auto& stroke : strokes) {
    for (auto& p : stroke) {
      const double u = (p[0] - 0.5) + shear * (p[1] - 0.5), v = p[1] - 0.5;
      p = {s / 2 + tx + scale * (c * u - sn * v), s / 2 + ty + scale * (sn * u + c * v)};
    }
  }
  Image img = Image::zeros(size, size, 1);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const Pt p{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& stroke : strokes)
        for (size_t i = 0; i + 1 < stroke.size(); ++i) d = std::min(d, segment_distance(p, stroke[i], stroke[i + 1]));
      img.at(y, x, 0) = static_cast<float>(1.0 / (1.0 + std::exp((d - half_width) / 0.45)));
    }
  }
  return img;
}

Video synth_video(Index frames, Index height, Index width, double fps, Rng& rng) {
  Video v;
  v.fps = fps;
  const std::array<double, 3> base{rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
  const std::array<double, 3> color{rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9)};
  const double x0 = rng.uniform(0.2, 0.4), y0 = rng.uniform(0.2, 0.4);
  const double vx = rng.uniform(0.2, 0.4), vy = rng.uniform(0.1, 0.3);
  const double radius = 0.18;
  for (Index t = 0; t < frames; ++t) {
    const double tau = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
    const double cx = x0 + vx * tau, cy = y0 + vy * tau;
    Image f = Image::zeros(height, width, 3);
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        const double u = (x + 0.5) / width, w = (y + 0.5) / height;
        const double r2 = ((u - cx) * (u - cx) + (w - cy) * (w - cy)) / (radius * radius);
        const double blob = std::exp(-r2);
        for (Index ch = 0; ch < 3; ++ch) {
          const double bg = base[static_cast<size_t>(ch)] * (0.6 + 0.4 * (ch == 0 ? u : ch == 1 ? w : 1.0 - u));
          f.at(y, x, ch) = static_cast<float>(std::clamp(bg * (1 - blob) + color[static_cast<size_t>(ch)] * blob, 0.0, 1.0));
        }
      }
    }
    v.frames.push_back(std::move(f));
  }
  return v;
}

AudioVisualClip synth_audiovisual(Index frames, Index height, Index width, double fps, double sample_rate,
                                  int audio_channels, Rng& rng) {
  AudioVisualClip clip;
  clip.video = synth_video(frames, height, width, fps, rng);
  const double seconds = static_cast<double>(frames) / fps;
  clip.audio = synth_tones(random_tones(3, 60.0, 600.0, rng), sample_rate, seconds, audio_channels);
  return clip;
}

VoxelGrid sphere_voxels(Index n, double radius) {
  VoxelGrid g = VoxelGrid::empty(n, n, n);
  for (Index x = 0; x < n; ++x)
    for (Index y = 0; y < n; ++y)
      for (Index z = 0; z < n; ++z) {
        const double a = grid_coord(x, n), b = grid_coord(y, n), c = grid_coord(z, n);
        g.occupied[static_cast<size_t>((x * n + y) * n + z)] = (a * a + b * b + c * c <= radius * radius) ? 1 : 0;
      }
  return g;
}

}  // namespace neomlp
