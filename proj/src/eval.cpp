#include "neomlp/eval.hpp"

#include "neomlp/error.hpp"
#include "neomlp/io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace neomlp {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json db_json(double db) { return std::isinf(db) ? json("inf") : json(db); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    if (std::isinf(x)) return x;
    s += x;
  }
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

json MetricReport::to_json() const {
  json j;
  j["points"] = points;
  j["mean_psnr"] = db_json(mean_psnr);
  if (mean_iou) j["mean_iou"] = *mean_iou;
  auto& arr = j["signals"] = json::array();
  for (const auto& s : signals) {
    json e{{"id", s.id}, {"modality", to_string(s.modality)}, {"points", s.points}, {"peak", s.peak},
           {"psnr", db_json(s.psnr)}};
    if (s.iou) e["iou"] = *s.iou;
    if (s.video_psnr) e["video_psnr"] = db_json(*s.video_psnr);
    if (s.audio_psnr) e["audio_psnr"] = db_json(*s.audio_psnr);
    arr.push_back(std::move(e));
  }
  return j;
}

MetricReport evaluate(const SignalDataset& ds, const Mat<float>& pred) {
  if (pred.rows() != ds.num_points() || pred.cols() != ds.output_dims)
    throw ConfigError("evaluate: predictions are " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                      ", the dataset has " + std::to_string(ds.num_points()) + "x" + std::to_string(ds.output_dims));
  MetricReport r;
  r.points = ds.num_points();
  std::vector<double> psnrs, ious;
  for (const auto& info : ds.signals) {
    const Mat<float> p = pred.middleRows(info.offset, info.count);
    const Mat<float> t = ds.targets.middleRows(info.offset, info.count);
    const Mat<float> m = ds.mask.middleRows(info.offset, info.count);
    SignalMetrics s;
    s.id = info.id;
    s.modality = info.modality;
    s.points = info.count;
    s.peak = modality_peak(info.modality);
    s.psnr = masked_psnr(p, t, m, s.peak);
    if (info.modality == Modality::Voxel) {
      s.iou = iou(p, t);
      ious.push_back(*s.iou);
    }
    if (info.modality == Modality::AudioVisual) {
      const Index cv = info.video_channels, ca = ds.output_dims - cv;
      s.video_psnr = masked_psnr(p.leftCols(cv), t.leftCols(cv), m.leftCols(cv), 1.0);
      s.audio_psnr = masked_psnr(p.rightCols(ca), t.rightCols(ca), m.rightCols(ca), 2.0);
    }
    psnrs.push_back(s.psnr);
    r.signals.push_back(std::move(s));
  }
  r.mean_psnr = mean_of(psnrs);
  if (!ious.empty()) r.mean_iou = mean_of(ious);
  return r;
}

SignalInfo upsampled_info(const SignalInfo& info, Index factor) {
  if (factor < 1) throw ConfigError("upsampling factor must be >= 1");
  SignalInfo u = info;
  u.offset = 0;
  switch (info.modality) {
    case Modality::Audio:
      u.shape[0] *= factor;
      u.sample_rate *= static_cast<double>(factor);
      u.count = u.shape[0];
      break;
    case Modality::Image:
      u.shape[0] *= factor;
      u.shape[1] *= factor;
      u.count = u.shape[0] * u.shape[1];
      break;
    case Modality::Voxel:
      for (int a = 0; a < 3; ++a) u.shape[static_cast<size_t>(a)] *= factor;
      u.count = u.shape[0] * u.shape[1] * u.shape[2];
      break;
    case Modality::Video:
    case Modality::AudioVisual:
      u.shape[1] *= factor;
      u.shape[2] *= factor;
      u.count = u.shape[0] * u.shape[1] * u.shape[2] + (info.modality == Modality::AudioVisual ? u.shape[4] : 0);
      break;
  }
  return u;
}

Mat<float> reconstruct(const NeoMLP<float>& model, const LatentSet<float>& latents, const SignalInfo& info,
                       Index factor) {
  return model.predict(upsampled_grid(info, factor), latents);
}

Mat<float> reconstruct(const BaselineField& model, const SignalInfo& info, Index factor) {
  return model.predict(upsampled_grid(info, factor));
}

namespace {

std::string file_stem(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ':') c = '_';
  return s;
}

Image clamped(Image img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

AudioClip clamped(AudioClip clip) {
  clip.samples = clip.samples.cwiseMax(-1.0).cwiseMin(1.0);
  return clip;
}

void write_frames(const fs::path& dir, const Video& v, std::vector<fs::path>& out) {
  fs::create_directories(dir);
  for (size_t t = 0; t < v.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.png", t);
    write_png(dir / name, clamped(v.frames[t]));
  }
  out.push_back(dir);
}

}  // namespace

std::vector<fs::path> write_reconstruction(const fs::path& dir, const SignalInfo& info, const Mat<float>& values) {
  fs::create_directories(dir);
  const std::string stem = file_stem(info.id);
  std::vector<fs::path> out;
  auto add = [&](const std::string& name) { return out.emplace_back(dir / name); };
  switch (info.modality) {
    case Modality::Audio: {
      const AudioClip clip = reassemble_audio(info, values);
      write_wav(add(stem + ".f32.wav"), clip, WavEncoding::Float32);
      write_wav(add(stem + ".wav"), clamped(clip), WavEncoding::Pcm16);
      break;
    }
    case Modality::Image: {
      const Image img = reassemble_image(info, values);
      write_raw_image(add(stem + ".raw"), img);
      write_png(add(stem + ".png"), clamped(img));
      break;
    }
    case Modality::Video: {
      const Video v = reassemble_video(info, values);
      write_raw_video(add(stem + ".raw"), v);
      write_frames(dir / (stem + "_frames"), v, out);
      break;
    }
    case Modality::AudioVisual: {
      const Video v = reassemble_video(info, values);
      write_raw_video(add(stem + ".raw"), v);
      write_frames(dir / (stem + "_frames"), v, out);
      const AudioClip clip = reassemble_audio(info, values);
      write_wav(add(stem + "_audio.f32.wav"), clip, WavEncoding::Float32);
      write_wav(add(stem + "_audio.wav"), clamped(clip), WavEncoding::Pcm16);
      break;
    }
    case Modality::Voxel:
      write_voxel(add(stem + ".vox"), reassemble_voxel(info, values));
      break;
  }
  return out;
}

}  // namespace neomlp
