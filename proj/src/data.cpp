#include "neomlp/data.hpp"

#include "neomlp/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace neomlp {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Audio: return "audio";
    case Modality::Image: return "image";
    case Modality::Video: return "video";
    case Modality::Voxel: return "voxel";
    case Modality::AudioVisual: return "audiovisual";
  }
  return "unknown";
}

Modality parse_modality(std::string_view s) {
  if (s == "audio") return Modality::Audio;
  if (s == "image") return Modality::Image;
  if (s == "video") return Modality::Video;
  if (s == "voxel") return Modality::Voxel;
  if (s == "audiovisual") return Modality::AudioVisual;
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

double modality_peak(Modality m) {
  return m == Modality::Audio || m == Modality::AudioVisual ? 2.0 : 1.0;
}

Image Image::zeros(Index h, Index w, Index c) {
  Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.data.assign(static_cast<size_t>(h * w * c), 0.0f);
  return img;
}

VoxelGrid VoxelGrid::empty(Index nx, Index ny, Index nz) {
  VoxelGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.occupied.assign(static_cast<size_t>(nx * ny * nz), 0);
  return g;
}

// ---- dataset -------------------------------------------------------------

void SignalDataset::append(const SignalDataset& other) {
  if (other.num_points() == 0 && other.signals.empty()) return;
  if (signals.empty() && num_points() == 0) {
    *this = other;
    return;
  }
  if (other.input_dims != input_dims || other.output_dims != output_dims)
    throw ConfigError("cannot combine signals with different input/output widths (" + std::to_string(input_dims) +
                      "->" + std::to_string(output_dims) + " vs " + std::to_string(other.input_dims) + "->" +
                      std::to_string(other.output_dims) + ")");
  const Index base = num_points();
  const Index sig_base = num_signals();
  Mat<float> c(base + other.num_points(), input_dims);
  Mat<float> t(base + other.num_points(), output_dims);
  Mat<float> m(base + other.num_points(), output_dims);
  c << coords, other.coords;
  t << targets, other.targets;
  m << mask, other.mask;
  coords = std::move(c);
  targets = std::move(t);
  mask = std::move(m);
  for (Index s : other.signal_of_point) signal_of_point.push_back(s + sig_base);
  for (SignalInfo info : other.signals) {
    info.offset += base;
    signals.push_back(std::move(info));
  }
}

SignalDataset SignalDataset::subset(const std::vector<Index>& signal_positions) const {
  SignalDataset out;
  out.input_dims = input_dims;
  out.output_dims = output_dims;
  Index total = 0;
  for (Index s : signal_positions) {
    if (s < 0 || s >= num_signals()) throw ConfigError("subset: signal index out of range");
    total += signals[static_cast<size_t>(s)].count;
  }
  out.coords.resize(total, input_dims);
  out.targets.resize(total, output_dims);
  out.mask.resize(total, output_dims);
  out.signal_of_point.reserve(static_cast<size_t>(total));
  Index row = 0;
  for (Index s : signal_positions) {
    SignalInfo info = signals[static_cast<size_t>(s)];
    out.coords.middleRows(row, info.count) = coords.middleRows(info.offset, info.count);
    out.targets.middleRows(row, info.count) = targets.middleRows(info.offset, info.count);
    out.mask.middleRows(row, info.count) = mask.middleRows(info.offset, info.count);
    out.signal_of_point.insert(out.signal_of_point.end(), static_cast<size_t>(info.count),
                               static_cast<Index>(out.signals.size()));
    info.offset = row;
    row += info.count;
    out.signals.push_back(std::move(info));
  }
  return out;
}

std::vector<int> SignalDataset::labels() const {
  std::vector<int> out;
  out.reserve(signals.size());
  for (const auto& s : signals) out.push_back(s.label);
  return out;
}

double SignalDataset::peak() const {
  double p = 0.0;
  for (const auto& s : signals) p = std::max(p, modality_peak(s.modality));
  return p > 0.0 ? p : 1.0;
}

void SignalDataset::validate() const {
  const Index P = num_points();
  if (coords.cols() != input_dims || targets.cols() != output_dims || mask.cols() != output_dims ||
      targets.rows() != P || mask.rows() != P || static_cast<Index>(signal_of_point.size()) != P)
    throw ConfigError("dataset: inconsistent array shapes");
  std::set<std::string> ids;
  Index sum = 0;
  for (size_t n = 0; n < signals.size(); ++n) {
    const auto& s = signals[n];
    if (!ids.insert(s.id).second) throw ConfigError("dataset: duplicate signal id '" + s.id + "'");
    if (s.offset != sum) throw ConfigError("dataset: signal '" + s.id + "' is not contiguous");
    for (Index p = s.offset; p < s.offset + s.count; ++p)
      if (signal_of_point[static_cast<size_t>(p)] != static_cast<Index>(n))
        throw ConfigError("dataset: point ownership does not match signal '" + s.id + "'");
    sum += s.count;
  }
  if (sum != P) throw ConfigError("dataset: per-signal counts do not add up to the point count");
}

// ---- coordinate conventions ---------------------------------------------

double rescale_time(double t_raw, double t_max, double scale) {
  if (!(scale > 0.0)) throw ConfigError("time scale must be positive");
  if (t_max <= 0.0) return 0.0;
  return scale * (2.0 * t_raw / t_max - 1.0);
}

double unscale_time(double t, double t_max, double scale) {
  if (!(scale > 0.0)) throw ConfigError("time scale must be positive");
  return (t / scale + 1.0) * 0.5 * t_max;
}

double grid_coord(Index i, Index n) {
  if (n <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

namespace {

SignalDataset single_signal(SignalInfo info, int input_dims, int output_dims, Index points) {
  SignalDataset ds;
  ds.input_dims = input_dims;
  ds.output_dims = output_dims;
  ds.coords.resize(points, input_dims);
  ds.targets.resize(points, output_dims);
  ds.mask = Mat<float>::Ones(points, output_dims);
  ds.signal_of_point.assign(static_cast<size_t>(points), 0);
  info.offset = 0;
  info.count = points;
  ds.signals.push_back(std::move(info));
  return ds;
}

double max_abs(const Mat<double>& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

void check_frames(const Video& video) {
  if (video.frames.empty()) throw IngestError("video has no frames");
  const Image& f0 = video.frames.front();
  for (const Image& f : video.frames)
    if (f.height != f0.height || f.width != f0.width || f.channels != f0.channels)
      throw IngestError("video frames differ in shape");
}

}  // namespace

// ---- ingestors -----------------------------------------------------------

SignalDataset ingest_audio(const AudioClip& clip, double time_scale, std::string id) {
  if (clip.channels < 1 || clip.samples.cols() != clip.channels) throw IngestError("audio: bad channel layout");
  if (!clip.samples.allFinite()) throw IngestError("audio: non-finite samples");
  const Index T = clip.frames();
  SignalInfo info;
  info.id = std::move(id);
  info.modality = Modality::Audio;
  info.shape = {T, clip.channels};
  info.time_scale = time_scale;
  info.sample_rate = clip.sample_rate;
  const double amp = max_abs(clip.samples);
  info.amplitude_scale = amp > 0.0 ? amp : 1.0;
  SignalDataset ds = single_signal(std::move(info), 1, clip.channels, T);
  const double inv = 1.0 / ds.signals[0].amplitude_scale;
  for (Index k = 0; k < T; ++k) {
    ds.coords(k, 0) = static_cast<float>(rescale_time(static_cast<double>(k), static_cast<double>(T - 1), time_scale));
    for (int c = 0; c < clip.channels; ++c) ds.targets(k, c) = static_cast<float>(clip.samples(k, c) * inv);
  }
  return ds;
}

SignalDataset ingest_image(const Image& img, std::string id) {
  if (img.height < 1 || img.width < 1 || img.channels < 1 ||
      static_cast<Index>(img.data.size()) != img.height * img.width * img.channels)
    throw IngestError("image: bad shape");
  SignalInfo info;
  info.id = std::move(id);
  info.modality = Modality::Image;
  info.shape = {img.height, img.width, img.channels};
  SignalDataset ds = single_signal(std::move(info), 2, static_cast<int>(img.channels), img.height * img.width);
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      const Index p = y * img.width + x;
      ds.coords(p, 0) = static_cast<float>(grid_coord(x, img.width));
      ds.coords(p, 1) = static_cast<float>(grid_coord(y, img.height));
      for (Index c = 0; c < img.channels; ++c) ds.targets(p, c) = img.at(y, x, c);
    }
  }
  return ds;
}

namespace {

// Writes T*H*W video points (x, y, t) from row `base` onward.
void fill_video(const Video& video, double t_max, double time_scale, int out_offset, SignalDataset& ds, Index base) {
  const Image& f0 = video.frames.front();
  const Index H = f0.height, W = f0.width, C = f0.channels;
  for (size_t t = 0; t < video.frames.size(); ++t) {
    const Image& f = video.frames[t];
    const float tc = static_cast<float>(rescale_time(static_cast<double>(t) / video.fps, t_max, time_scale));
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) {
        const Index p = base + (static_cast<Index>(t) * H + y) * W + x;
        ds.coords(p, 0) = static_cast<float>(grid_coord(x, W));
        ds.coords(p, 1) = static_cast<float>(grid_coord(y, H));
        ds.coords(p, 2) = tc;
        for (Index c = 0; c < C; ++c) ds.targets(p, out_offset + c) = f.at(y, x, c);
      }
    }
  }
}

}  // namespace

SignalDataset ingest_video(const Video& video, double time_scale, std::string id) {
  check_frames(video);
  if (!(video.fps > 0.0)) throw IngestError("video: fps must be positive");
  const Image& f0 = video.frames.front();
  const Index T = static_cast<Index>(video.frames.size());
  SignalInfo info;
  info.id = std::move(id);
  info.modality = Modality::Video;
  info.shape = {T, f0.height, f0.width, f0.channels};
  info.time_scale = time_scale;
  info.fps = video.fps;
  SignalDataset ds = single_signal(std::move(info), 3, static_cast<int>(f0.channels), T * f0.height * f0.width);
  fill_video(video, static_cast<double>(T - 1) / video.fps, time_scale, 0, ds, 0);
  return ds;
}

SignalDataset ingest_audiovisual(const Video& video, const AudioClip& audio, double time_scale, std::string id) {
  check_frames(video);
  if (!(video.fps > 0.0) || !(audio.sample_rate > 0.0)) throw IngestError("audiovisual: rates must be positive");
  if (audio.channels < 1 || audio.samples.cols() != audio.channels) throw IngestError("audiovisual: bad audio layout");
  const Image& f0 = video.frames.front();
  const Index T = static_cast<Index>(video.frames.size());
  const Index A = audio.frames();
  const double video_span = static_cast<double>(T) / video.fps;
  const double audio_span = static_cast<double>(A) / audio.sample_rate;
  const double tolerance = std::max(1.0 / video.fps, 1.0 / audio.sample_rate);
  if (std::abs(video_span - audio_span) > tolerance)
    throw IngestError("audiovisual: video spans " + std::to_string(video_span) + " s but audio spans " +
                      std::to_string(audio_span) + " s");

  const int Cv = static_cast<int>(f0.channels);
  const int Ca = audio.channels;
  const Index Pv = T * f0.height * f0.width;
  SignalInfo info;
  info.id = std::move(id);
  info.modality = Modality::AudioVisual;
  info.shape = {T, f0.height, f0.width, Cv, A, Ca};
  info.time_scale = time_scale;
  info.video_channels = Cv;
  info.sample_rate = audio.sample_rate;
  info.fps = video.fps;
  const double amp = max_abs(audio.samples);
  info.amplitude_scale = amp > 0.0 ? amp : 1.0;
  SignalDataset ds = single_signal(std::move(info), 3, Cv + Ca, Pv + A);
  ds.targets.setZero();
  ds.mask.setZero();
  ds.mask.topLeftCorner(Pv, Cv).setOnes();
  ds.mask.bottomRightCorner(A, Ca).setOnes();

  const double t_max = std::max(static_cast<double>(T - 1) / video.fps, static_cast<double>(A - 1) / audio.sample_rate);
  fill_video(video, t_max, time_scale, 0, ds, 0);
  const double inv = 1.0 / ds.signals[0].amplitude_scale;
  for (Index j = 0; j < A; ++j) {
    const Index p = Pv + j;
    ds.coords(p, 0) = 0.0f;
    ds.coords(p, 1) = 0.0f;
    ds.coords(p, 2) = static_cast<float>(rescale_time(static_cast<double>(j) / audio.sample_rate, t_max, time_scale));
    for (int c = 0; c < Ca; ++c) ds.targets(p, Cv + c) = static_cast<float>(audio.samples(j, c) * inv);
  }
  return ds;
}

SignalDataset ingest_voxel(const VoxelGrid& grid, std::string id) {
  const Index P = grid.nx * grid.ny * grid.nz;
  if (P < 1 || static_cast<Index>(grid.occupied.size()) != P) throw IngestError("voxel: bad shape");
  SignalInfo info;
  info.id = std::move(id);
  info.modality = Modality::Voxel;
  info.shape = {grid.nx, grid.ny, grid.nz};
  SignalDataset ds = single_signal(std::move(info), 3, 1, P);
  for (Index x = 0; x < grid.nx; ++x) {
    for (Index y = 0; y < grid.ny; ++y) {
      for (Index z = 0; z < grid.nz; ++z) {
        const Index p = (x * grid.ny + y) * grid.nz + z;
        ds.coords(p, 0) = static_cast<float>(grid_coord(x, grid.nx));
        ds.coords(p, 1) = static_cast<float>(grid_coord(y, grid.ny));
        ds.coords(p, 2) = static_cast<float>(grid_coord(z, grid.nz));
        ds.targets(p, 0) = grid.occupied[static_cast<size_t>(p)] ? 1.0f : 0.0f;
      }
    }
  }
  return ds;
}

// ---- inverses ------------------------------------------------------------

namespace {

void expect(const SignalInfo& info, Modality m, size_t rank) {
  if (info.modality != m || info.shape.size() != rank)
    throw ConfigError("reassemble: signal '" + info.id + "' is not a " + to_string(m));
}

}  // namespace

AudioClip reassemble_audio(const SignalInfo& info, const Mat<float>& values) {
  if (info.modality == Modality::AudioVisual && info.shape.size() == 6) {
    const Index Pv = info.shape[0] * info.shape[1] * info.shape[2];
    const Index A = info.shape[4], Ca = info.shape[5];
    if (values.rows() != Pv + A || values.cols() != info.shape[3] + Ca)
      throw ConfigError("reassemble_audio: value shape mismatch");
    AudioClip clip;
    clip.sample_rate = info.sample_rate;
    clip.channels = static_cast<int>(Ca);
    clip.samples = values.bottomRightCorner(A, Ca).cast<double>();
    return clip;
  }
  expect(info, Modality::Audio, 2);
  const Index T = info.shape[0];
  const Index C = info.shape[1];
  if (values.rows() != T || values.cols() != C) throw ConfigError("reassemble_audio: value shape mismatch");
  AudioClip clip;
  clip.sample_rate = info.sample_rate;
  clip.channels = static_cast<int>(C);
  clip.samples = values.cast<double>();
  return clip;
}

Image reassemble_image(const SignalInfo& info, const Mat<float>& values) {
  expect(info, Modality::Image, 3);
  const Index H = info.shape[0], W = info.shape[1], C = info.shape[2];
  if (values.rows() != H * W || values.cols() != C) throw ConfigError("reassemble_image: value shape mismatch");
  Image img = Image::zeros(H, W, C);
  std::copy(values.data(), values.data() + values.size(), img.data.begin());
  return img;
}

Video reassemble_video(const SignalInfo& info, const Mat<float>& values) {
  Index T = 0, H = 0, W = 0, C = 0;
  if (info.modality == Modality::AudioVisual && info.shape.size() == 6) {
    T = info.shape[0];
    H = info.shape[1];
    W = info.shape[2];
    C = info.shape[3];
  } else {
    expect(info, Modality::Video, 4);
    T = info.shape[0];
    H = info.shape[1];
    W = info.shape[2];
    C = info.shape[3];
  }
  if (values.rows() < T * H * W || values.cols() < C) throw ConfigError("reassemble_video: value shape mismatch");
  Video v;
  v.fps = info.fps;
  for (Index t = 0; t < T; ++t) {
    Image f = Image::zeros(H, W, C);
    for (Index p = 0; p < H * W; ++p)
      for (Index c = 0; c < C; ++c) f.data[static_cast<size_t>(p * C + c)] = values(t * H * W + p, c);
    v.frames.push_back(std::move(f));
  }
  return v;
}

VoxelGrid reassemble_voxel(const SignalInfo& info, const Mat<float>& values, float threshold) {
  expect(info, Modality::Voxel, 3);
  VoxelGrid g = VoxelGrid::empty(info.shape[0], info.shape[1], info.shape[2]);
  if (values.rows() != static_cast<Index>(g.occupied.size()) || values.cols() != 1)
    throw ConfigError("reassemble_voxel: value shape mismatch");
  for (Index p = 0; p < values.rows(); ++p) g.occupied[static_cast<size_t>(p)] = values(p, 0) >= threshold ? 1 : 0;
  return g;
}

Mat<float> signal_rows(const SignalDataset& ds, Index n, const Mat<float>& values) {
  const SignalInfo& s = ds.signals.at(static_cast<size_t>(n));
  return values.middleRows(s.offset, s.count);
}

Mat<float> upsampled_grid(const SignalInfo& info, Index factor) {
  if (factor < 1) throw ConfigError("upsampled_grid: factor must be >= 1");
  switch (info.modality) {
    case Modality::Image: {
      const Index H = info.shape[0] * factor, W = info.shape[1] * factor;
      Mat<float> g(H * W, 2);
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) {
          g(y * W + x, 0) = static_cast<float>(grid_coord(x, W));
          g(y * W + x, 1) = static_cast<float>(grid_coord(y, H));
        }
      return g;
    }
    case Modality::Voxel: {
      const Index X = info.shape[0] * factor, Y = info.shape[1] * factor, Z = info.shape[2] * factor;
      Mat<float> g(X * Y * Z, 3);
      for (Index x = 0; x < X; ++x)
        for (Index y = 0; y < Y; ++y)
          for (Index z = 0; z < Z; ++z) {
            const Index p = (x * Y + y) * Z + z;
            g(p, 0) = static_cast<float>(grid_coord(x, X));
            g(p, 1) = static_cast<float>(grid_coord(y, Y));
            g(p, 2) = static_cast<float>(grid_coord(z, Z));
          }
      return g;
    }
    case Modality::Audio: {
      const Index T = info.shape[0] * factor;
      Mat<float> g(T, 1);
      for (Index k = 0; k < T; ++k)
        g(k, 0) = static_cast<float>(rescale_time(static_cast<double>(k), static_cast<double>(T - 1), info.time_scale));
      return g;
    }
    case Modality::Video:
    case Modality::AudioVisual: {
      const bool av = info.modality == Modality::AudioVisual;
      const Index T = info.shape[0], H = info.shape[1] * factor, W = info.shape[2] * factor;
      const Index A = av ? info.shape[4] : 0;
      double t_max = static_cast<double>(T - 1) / info.fps;
      if (av) t_max = std::max(t_max, static_cast<double>(A - 1) / info.sample_rate);
      Mat<float> g(T * H * W + A, 3);
      for (Index t = 0; t < T; ++t) {
        const auto tc = static_cast<float>(rescale_time(static_cast<double>(t) / info.fps, t_max, info.time_scale));
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            const Index p = (t * H + y) * W + x;
            g(p, 0) = static_cast<float>(grid_coord(x, W));
            g(p, 1) = static_cast<float>(grid_coord(y, H));
            g(p, 2) = tc;
          }
      }
      for (Index j = 0; j < A; ++j) {
        const Index p = T * H * W + j;
        g(p, 0) = 0.0f;
        g(p, 1) = 0.0f;
        g(p, 2) = static_cast<float>(rescale_time(static_cast<double>(j) / info.sample_rate, t_max, info.time_scale));
      }
      return g;
    }
  }
  throw ConfigError("upsampled_grid: unsupported modality " + to_string(info.modality));
}

}  // namespace neomlp
