#include "neomlp/io.hpp"

#include "neomlp/error.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace neomlp {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

namespace {

template <class T>
T load_le(const std::string& buf, size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

}  // namespace

// ---- WAV -----------------------------------------------------------------

AudioClip read_wav(const fs::path& path) {
  const std::string buf = read_file(path);
  auto fail = [&](const std::string& why) { return IngestError("wav '" + path.string() + "': " + why); };
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
    throw fail("not a RIFF/WAVE file");
  size_t off = 12;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  const char* data = nullptr;
  size_t data_size = 0;
  while (off + 8 <= buf.size()) {
    const std::string id = buf.substr(off, 4);
    const uint32_t size = load_le<uint32_t>(buf, off + 4);
    const size_t body = off + 8;
    if (body + size > buf.size()) throw fail("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw fail("short fmt chunk");
      format = load_le<uint16_t>(buf, body);
      channels = load_le<uint16_t>(buf, body + 2);
      rate = load_le<uint32_t>(buf, body + 4);
      bits = load_le<uint16_t>(buf, body + 14);
      if (format == 0xFFFE && size >= 40) format = load_le<uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data = buf.data() + body;
      data_size = size;
    }
    off = body + size + (size & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels == 0) throw fail("zero channels");
  const bool pcm = format == 1 && (bits == 16 || bits == 24);
  const bool flt = format == 3 && bits == 32;
  if (!pcm && !flt)
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");
  const size_t bytes = bits / 8;
  const size_t frames = data_size / (bytes * channels);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.channels = channels;
  clip.samples.resize(static_cast<Index>(frames), channels);
  const auto* p = reinterpret_cast<const unsigned char*>(data);
  for (size_t f = 0; f < frames; ++f) {
    for (size_t c = 0; c < channels; ++c) {
      const unsigned char* s = p + (f * channels + c) * bytes;
      double v = 0.0;
      if (flt) {
        float x;
        std::memcpy(&x, s, 4);
        v = x;
      } else if (bits == 16) {
        v = static_cast<int16_t>(static_cast<uint16_t>(s[0] | (s[1] << 8))) / 32768.0;
      } else {
        int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
        if (x & 0x800000) x -= 0x1000000;
        v = x / 8388608.0;
      }
      clip.samples(static_cast<Index>(f), static_cast<Index>(c)) = v;
    }
  }
  return clip;
}

void write_wav(const fs::path& path, const AudioClip& clip, WavEncoding enc) {
  const uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : enc == WavEncoding::Pcm24 ? 24 : 32;
  const uint16_t format = enc == WavEncoding::Float32 ? 3 : 1;
  const auto channels = static_cast<uint16_t>(clip.channels);
  const auto rate = static_cast<uint32_t>(std::lround(clip.sample_rate));
  const uint32_t data_size = static_cast<uint32_t>(clip.frames()) * channels * (bits / 8);
  std::string out;
  out += "RIFF";
  put_le<uint32_t>(out, 36 + data_size);
  out += "WAVEfmt ";
  put_le<uint32_t>(out, 16);
  put_le<uint16_t>(out, format);
  put_le<uint16_t>(out, channels);
  put_le<uint32_t>(out, rate);
  put_le<uint32_t>(out, rate * channels * (bits / 8));
  put_le<uint16_t>(out, static_cast<uint16_t>(channels * (bits / 8)));
  put_le<uint16_t>(out, bits);
  out += "data";
  put_le<uint32_t>(out, data_size);
  for (Index f = 0; f < clip.frames(); ++f) {
    for (int c = 0; c < clip.channels; ++c) {
      const double v = std::clamp(clip.samples(f, c), -1.0, 1.0);
      if (enc == WavEncoding::Float32) {
        put_le<float>(out, static_cast<float>(clip.samples(f, c)));
      } else if (enc == WavEncoding::Pcm16) {
        put_le<int16_t>(out, static_cast<int16_t>(std::clamp(std::lround(v * 32768.0), -32768L, 32767L)));
      } else {
        const auto x = static_cast<int32_t>(std::clamp(std::lround(v * 8388608.0), -8388608L, 8388607L));
        out.push_back(static_cast<char>(x & 0xFF));
        out.push_back(static_cast<char>((x >> 8) & 0xFF));
        out.push_back(static_cast<char>((x >> 16) & 0xFF));
      }
    }
  }
  write_file_atomic(path, out);
}

// ---- PNG -----------------------------------------------------------------

Image read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  const std::string buf = read_file(path);
  if (png_image_begin_read_from_memory(&img, buf.data(), buf.size()) == 0)
    throw IngestError("png '" + path.string() + "': " + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const Index C = static_cast<Index>(PNG_IMAGE_SAMPLE_CHANNELS(img.format));
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr) == 0) {
    png_image_free(&img);
    throw IngestError("png '" + path.string() + "': " + img.message);
  }
  Image out = Image::zeros(img.height, img.width, C);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.channels < 1 || img.channels > 4) throw ConfigError("write_png: 1 to 4 channels supported");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  static constexpr png_uint_32 formats[] = {PNG_FORMAT_GRAY, PNG_FORMAT_GA, PNG_FORMAT_RGB, PNG_FORMAT_RGBA};
  pi.format = formats[img.channels - 1];
  std::vector<png_byte> pixels(img.data.size());
  for (size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<png_byte>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  png_alloc_size_t size = 0;
  if (png_image_write_get_memory_size(pi, size, 0, pixels.data(), 0, nullptr) == 0)
    throw IoError("png encode failed: " + std::string(pi.message));
  std::string out(size, '\0');
  if (png_image_write_to_memory(&pi, out.data(), &size, 0, pixels.data(), 0, nullptr) == 0)
    throw IoError("png encode failed: " + std::string(pi.message));
  out.resize(size);
  write_file_atomic(path, out);
}

// ---- raw planar dumps ----------------------------------------------------

namespace {

fs::path sidecar(const fs::path& path) {
  fs::path s = path;
  s += ".json";
  return s;
}

struct RawShape {
  Index frames = 1, height = 0, width = 0, channels = 0;
  bool float32 = true;
  double fps = 25.0;
};

RawShape read_sidecar(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(sidecar(path)));
  } catch (const json::exception& e) {
    throw IngestError("raw sidecar for '" + path.string() + "': " + e.what());
  }
  RawShape s;
  s.frames = j.value("frames", 1);
  s.height = j.at("height").get<Index>();
  s.width = j.at("width").get<Index>();
  s.channels = j.value("channels", 1);
  const std::string dtype = j.value("dtype", "float32");
  if (dtype != "float32" && dtype != "uint8") throw IngestError("raw sidecar: unsupported dtype '" + dtype + "'");
  s.float32 = dtype == "float32";
  s.fps = j.value("fps", 25.0);
  if (s.frames < 1 || s.height < 1 || s.width < 1 || s.channels < 1) throw IngestError("raw sidecar: bad shape");
  return s;
}

std::vector<Image> read_planes(const fs::path& path, const RawShape& s) {
  const std::string buf = read_file(path);
  const size_t elem = s.float32 ? 4 : 1;
  const size_t plane = static_cast<size_t>(s.height * s.width);
  const size_t need = static_cast<size_t>(s.frames * s.channels) * plane * elem;
  if (buf.size() != need)
    throw IngestError("raw '" + path.string() + "': expected " + std::to_string(need) + " bytes, found " +
                      std::to_string(buf.size()));
  std::vector<Image> frames;
  for (Index t = 0; t < s.frames; ++t) {
    Image img = Image::zeros(s.height, s.width, s.channels);
    for (Index c = 0; c < s.channels; ++c) {
      for (size_t p = 0; p < plane; ++p) {
        const size_t src = (static_cast<size_t>(t * s.channels + c) * plane + p) * elem;
        const float v = s.float32 ? load_le<float>(buf, src) : static_cast<unsigned char>(buf[src]) / 255.0f;
        img.data[p * static_cast<size_t>(s.channels) + static_cast<size_t>(c)] = v;
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

void write_planes(const fs::path& path, const std::vector<Image>& frames, double fps) {
  if (frames.empty()) throw ConfigError("write_raw: no frames");
  const Image& f0 = frames.front();
  std::string out;
  out.reserve(frames.size() * f0.data.size() * 4);
  for (const Image& f : frames)
    for (Index c = 0; c < f0.channels; ++c)
      for (Index p = 0; p < f0.height * f0.width; ++p) put_le<float>(out, f.data[static_cast<size_t>(p * f0.channels + c)]);
  json j = {{"frames", frames.size()}, {"height", f0.height}, {"width", f0.width},
            {"channels", f0.channels}, {"dtype", "float32"},  {"fps", fps}};
  write_file_atomic(path, out);
  write_file_atomic(sidecar(path), j.dump(2) + "\n");
}

}  // namespace

Image read_raw_image(const fs::path& path) {
  RawShape s = read_sidecar(path);
  if (s.frames != 1) throw IngestError("raw '" + path.string() + "' holds " + std::to_string(s.frames) + " frames");
  return std::move(read_planes(path, s).front());
}

void write_raw_image(const fs::path& path, const Image& img) { write_planes(path, {img}, 25.0); }

Video read_raw_video(const fs::path& path) {
  RawShape s = read_sidecar(path);
  Video v;
  v.fps = s.fps;
  v.frames = read_planes(path, s);
  return v;
}

void write_raw_video(const fs::path& path, const Video& video) { write_planes(path, video.frames, video.fps); }

Video read_video(const fs::path& path, double fps) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IngestError("no PNG frames in '" + path.string() + "'");
    Video v;
    v.fps = fps;
    for (const auto& f : files) v.frames.push_back(read_png(f));
    return v;
  }
  Video v = read_raw_video(path);
  return v;
}

// ---- voxels --------------------------------------------------------------

VoxelGrid read_voxel(const fs::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8) throw IngestError("voxel '" + path.string() + "': missing header");
  const Index nx = load_le<uint16_t>(buf, 0), ny = load_le<uint16_t>(buf, 2), nz = load_le<uint16_t>(buf, 4);
  VoxelGrid g = VoxelGrid::empty(nx, ny, nz);
  const size_t bits = g.occupied.size();
  if (buf.size() != 8 + (bits + 7) / 8)
    throw IngestError("voxel '" + path.string() + "': payload size does not match the header");
  for (size_t i = 0; i < bits; ++i)
    g.occupied[i] = (static_cast<unsigned char>(buf[8 + i / 8]) >> (i % 8)) & 1u;
  return g;
}

void write_voxel(const fs::path& path, const VoxelGrid& grid) {
  if (grid.nx > 0xFFFF || grid.ny > 0xFFFF || grid.nz > 0xFFFF) throw ConfigError("voxel extents exceed 65535");
  std::string out;
  put_le<uint16_t>(out, static_cast<uint16_t>(grid.nx));
  put_le<uint16_t>(out, static_cast<uint16_t>(grid.ny));
  put_le<uint16_t>(out, static_cast<uint16_t>(grid.nz));
  put_le<uint16_t>(out, 0);
  std::string bits((grid.occupied.size() + 7) / 8, '\0');
  for (size_t i = 0; i < grid.occupied.size(); ++i)
    if (grid.occupied[i]) bits[i / 8] = static_cast<char>(static_cast<unsigned char>(bits[i / 8]) | (1u << (i % 8)));
  write_file_atomic(path, out + bits);
}

// ---- manifest ------------------------------------------------------------

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest not found: '" + path.string() + "'");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IngestError("manifest '" + path.string() + "': " + e.what());
  }
  const json& list = j.is_object() ? j.at("signals") : j;
  if (!list.is_array()) throw IngestError("manifest '" + path.string() + "': expected a list of signals");
  Manifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> ids;
  try {
    for (const auto& e : list) {
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.modality = parse_modality(e.at("modality").get<std::string>());
      me.path = e.at("path").get<std::string>();
      if (e.contains("audio_path")) me.audio_path = e.at("audio_path").get<std::string>();
      if (e.contains("label") && !e.at("label").is_null()) me.label = e.at("label").get<int>();
      if (e.contains("fps")) me.fps = e.at("fps").get<double>();
      if (e.contains("time_scale")) me.time_scale = e.at("time_scale").get<double>();
      me.augmentations = e.value("augmentations", 0);
      if (me.modality == Modality::AudioVisual && me.audio_path.empty())
        throw IngestError("manifest entry '" + me.id + "': audiovisual entries need an audio_path");
      if (!ids.insert(me.id).second) throw IngestError("manifest: duplicate id '" + me.id + "'");
      m.entries.push_back(std::move(me));
    }
  } catch (const json::exception& e) {
    throw IngestError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  json list = json::array();
  for (const auto& e : manifest.entries) {
    json j = {{"id", e.id}, {"modality", to_string(e.modality)}, {"path", e.path.string()}};
    if (!e.audio_path.empty()) j["audio_path"] = e.audio_path.string();
    if (e.label) j["label"] = *e.label;
    if (e.fps) j["fps"] = *e.fps;
    if (e.time_scale) j["time_scale"] = *e.time_scale;
    if (e.augmentations > 0) j["augmentations"] = e.augmentations;
    list.push_back(std::move(j));
  }
  write_file_atomic(path, json{{"signals", list}}.dump(2) + "\n");
}

namespace {

fs::path resolve(const Manifest& m, const fs::path& p) { return p.is_absolute() ? p : m.base_dir / p; }

Image load_image(const fs::path& p) { return p.extension() == ".png" ? read_png(p) : read_raw_image(p); }

}  // namespace

SignalDataset ingest_manifest(const Manifest& manifest, uint64_t seed) {
  SignalDataset ds;
  Rng rng(seed, "ingest");
  for (const auto& e : manifest.entries) {
    const fs::path path = resolve(manifest, e.path);
    if (!fs::exists(path)) throw IoError("signal '" + e.id + "': source not found: '" + path.string() + "'");
    std::vector<SignalDataset> parts;
    switch (e.modality) {
      case Modality::Audio:
        parts.push_back(ingest_audio(read_wav(path), e.time_scale.value_or(100.0), e.id));
        break;
      case Modality::Image: {
        std::vector<LabeledImage> imgs{{e.id, load_image(path), e.label.value_or(-1)}};
        if (e.augmentations > 0) imgs = expand_augmentations(imgs, e.augmentations, rng);
        for (const auto& li : imgs) parts.push_back(ingest_image(li.image, li.id));
        break;
      }
      case Modality::Video:
        parts.push_back(ingest_video(read_video(path, e.fps.value_or(25.0)), e.time_scale.value_or(1.0), e.id));
        break;
      case Modality::Voxel:
        parts.push_back(ingest_voxel(read_voxel(path), e.id));
        break;
      case Modality::AudioVisual: {
        Video v = read_video(path, e.fps.value_or(25.0));
        if (e.fps) v.fps = *e.fps;
        const fs::path ap = resolve(manifest, e.audio_path);
        if (!fs::exists(ap)) throw IoError("signal '" + e.id + "': audio not found: '" + ap.string() + "'");
        parts.push_back(ingest_audiovisual(v, read_wav(ap), e.time_scale.value_or(100.0), e.id));
        break;
      }
    }
    for (auto& part : parts) {
      for (auto& s : part.signals) s.label = e.label.value_or(-1);
      ds.append(part);
    }
  }
  ds.validate();
  return ds;
}

// ---- augmentation --------------------------------------------------------

Image augment_image(const Image& img, Rng& rng, Index pad) {
  const bool flip = rng.uniform() < 0.5;
  const Index dy = static_cast<Index>(rng.index(static_cast<uint64_t>(2 * pad + 1))) - pad;
  const Index dx = static_cast<Index>(rng.index(static_cast<uint64_t>(2 * pad + 1))) - pad;
  Image out = Image::zeros(img.height, img.width, img.channels);
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      const Index sy = y + dy;
      Index sx = x + dx;
      if (sy < 0 || sy >= img.height || sx < 0 || sx >= img.width) continue;
      if (flip) sx = img.width - 1 - sx;
      for (Index c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

std::vector<LabeledImage> expand_augmentations(const std::vector<LabeledImage>& images, int copies, Rng& rng) {
  std::vector<LabeledImage> out;
  out.reserve(images.size() * static_cast<size_t>(copies + 1));
  for (const auto& li : images) {
    out.push_back(li);
    for (int k = 0; k < copies; ++k)
      out.push_back({li.id + "#aug" + std::to_string(k), augment_image(li.image, rng), li.label});
  }
  return out;
}

}  // namespace neomlp
