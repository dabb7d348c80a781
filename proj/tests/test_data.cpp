#include "neomlp/data.hpp"
#include "neomlp/error.hpp"
#include "neomlp/io.hpp"
#include "neomlp/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

using namespace neomlp;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("neomlp_data_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

AudioClip clip_of(std::initializer_list<double> v, double rate = 4.0) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) c.samples(i++, 0) = x;
  return c;
}

Image random_image(Index h, Index w, Index c, Rng& rng) {
  Image img = Image::zeros(h, w, c);
  for (auto& v : img.data) v = static_cast<float>(rng.index(256)) / 255.0f;
  return img;
}

}  // namespace

TEST(Time, AffineRescale) {
  EXPECT_DOUBLE_EQ(rescale_time(3.5, 7.0, 100.0), 0.0);
  EXPECT_DOUBLE_EQ(rescale_time(0.0, 7.0, 100.0), -100.0);
  EXPECT_DOUBLE_EQ(rescale_time(7.0, 7.0, 100.0), 100.0);
  EXPECT_DOUBLE_EQ(rescale_time(0.0, 0.0, 100.0), 0.0);
  for (double t : {0.1, 1.3, 6.99}) EXPECT_NEAR(unscale_time(rescale_time(t, 7.0, 100.0), 7.0, 100.0), t, 1e-9 * t);
}

TEST(Audio, FourSampleGrid) {
  const SignalDataset ds = ingest_audio(clip_of({0.1, -0.2, 0.4, 0.0}));
  ASSERT_EQ(ds.num_points(), 4);
  EXPECT_EQ(ds.coords(0, 0), -100.0f);
  EXPECT_FLOAT_EQ(ds.coords(1, 0), static_cast<float>(-100.0 + 200.0 / 3.0));
  EXPECT_FLOAT_EQ(ds.coords(2, 0), static_cast<float>(-100.0 + 400.0 / 3.0));
  EXPECT_EQ(ds.coords(3, 0), 100.0f);
  // Normalised by the peak magnitude with signs kept.
  EXPECT_FLOAT_EQ(ds.targets(2, 0), 1.0f);
  EXPECT_FLOAT_EQ(ds.targets(1, 0), -0.5f);
}

TEST(Audio, SilentClip) {
  const SignalDataset ds = ingest_audio(clip_of({0, 0, 0}));
  EXPECT_TRUE((ds.targets.array() == 0.0f).all());
}

TEST(Audio, SevenSecondsAt44k) {
  AudioClip c;
  c.sample_rate = 44100.0;
  c.samples = Mat<double>::Zero(7 * 44100, 1);
  EXPECT_EQ(ingest_audio(c).num_points(), 308700);
}

TEST(Audio, WavRoundTrip) {
  Scratch s;
  Rng rng(1);
  const AudioClip clip = synth_tones(random_tones(3, 50, 1000, rng), 8000, 0.25, 2);
  for (auto enc : {WavEncoding::Pcm16, WavEncoding::Pcm24, WavEncoding::Float32}) {
    const fs::path p = s.dir / "c.wav";
    write_wav(p, clip, enc);
    const AudioClip back = read_wav(p);
    ASSERT_EQ(back.frames(), clip.frames());
    ASSERT_EQ(back.channels, 2);
    EXPECT_EQ(back.sample_rate, 8000);
    const double tol = enc == WavEncoding::Pcm16 ? 1.0 / 32767 : enc == WavEncoding::Pcm24 ? 1e-6 : 1e-7;
    EXPECT_LT((back.samples - clip.samples).cwiseAbs().maxCoeff(), tol);
  }
}

TEST(Audio, TruncatedWavIsRejected) {
  Scratch s;
  const fs::path p = s.dir / "bad.wav";
  std::ofstream(p, std::ios::binary) << "RIFF\x10\0\0\0WAVEfmt ";
  EXPECT_THROW(read_wav(p), IoError);
}

TEST(Image, CornerGrid) {
  Image img = Image::zeros(2, 2, 1);
  const SignalDataset ds = ingest_image(img);
  ASSERT_EQ(ds.num_points(), 4);
  std::set<std::pair<float, float>> corners;
  for (Index p = 0; p < 4; ++p) corners.insert({ds.coords(p, 0), ds.coords(p, 1)});
  EXPECT_EQ(corners, (std::set<std::pair<float, float>>{{-1, -1}, {-1, 1}, {1, -1}, {1, 1}}));
}

TEST(Image, DigitShape) {
  Rng rng(2);
  const SignalDataset ds = ingest_image(synth_digit(3, rng));
  EXPECT_EQ(ds.num_points(), 784);
  EXPECT_EQ(ds.output_dims, 1);
  EXPECT_EQ(ds.input_dims, 2);
}

TEST(Image, ColourRoundTrip) {
  Rng rng(3);
  const Image img = random_image(32, 32, 3, rng);
  const SignalDataset ds = ingest_image(img);
  const Image back = reassemble_image(ds.signals[0], ds.targets);
  EXPECT_EQ(back.data, img.data);
}

TEST(Image, PngAndRawRoundTrip) {
  Scratch s;
  Rng rng(4);
  const Image img = random_image(5, 7, 3, rng);
  write_png(s.dir / "a.png", img);
  EXPECT_EQ(read_png(s.dir / "a.png").data, img.data);
  write_raw_image(s.dir / "a.raw", img);
  EXPECT_EQ(read_raw_image(s.dir / "a.raw").data, img.data);
}

TEST(Video, PointCountAndRoundTrip) {
  Rng rng(5);
  const Video v = synth_video(3, 4, 5, 10.0, rng);
  const SignalDataset ds = ingest_video(v);
  EXPECT_EQ(ds.num_points(), 3 * 4 * 5);
  EXPECT_EQ(ds.output_dims, 3);
  const Video back = reassemble_video(ds.signals[0], ds.targets);
  ASSERT_EQ(back.frames.size(), 3u);
  for (size_t t = 0; t < 3; ++t) EXPECT_EQ(back.frames[t].data, v.frames[t].data);
}

TEST(Video, SingleFrameIsAnImageWithConstantTime) {
  Rng rng(6);
  Video v;
  v.frames.push_back(random_image(3, 4, 1, rng));
  const SignalDataset dv = ingest_video(v);
  const SignalDataset di = ingest_image(v.frames[0]);
  ASSERT_EQ(dv.num_points(), di.num_points());
  for (Index p = 0; p < dv.num_points(); ++p) {
    EXPECT_EQ(dv.coords(p, 0), di.coords(p, 0));
    EXPECT_EQ(dv.coords(p, 1), di.coords(p, 1));
    EXPECT_EQ(dv.coords(p, 2), dv.coords(0, 2));
    EXPECT_EQ(dv.targets(p, 0), di.targets(p, 0));
  }
}

TEST(Video, RawAndFrameDirectoryReaders) {
  Scratch s;
  Rng rng(7);
  const Video v = synth_video(2, 3, 3, 5.0, rng);
  write_raw_video(s.dir / "v.raw", v);
  const Video raw = read_raw_video(s.dir / "v.raw");
  EXPECT_EQ(raw.frames[1].data, v.frames[1].data);
  EXPECT_EQ(raw.fps, 5.0);
  fs::create_directories(s.dir / "frames");
  for (size_t t = 0; t < 2; ++t) write_png(s.dir / "frames" / ("f" + std::to_string(t) + ".png"), v.frames[t]);
  // PNG frames are 8-bit, so they agree with the float frames to half a level.
  const Image png = read_video(s.dir / "frames", 5.0).frames[0];
  ASSERT_EQ(png.data.size(), raw.frames[0].data.size());
  for (size_t i = 0; i < png.data.size(); ++i) EXPECT_NEAR(png.data[i], raw.frames[0].data[i], 0.5f / 255.0f + 1e-6f);
}

TEST(AudioVisual, LayoutAndMasks) {
  Rng rng(8);
  const AudioVisualClip av = synth_audiovisual(4, 3, 3, 4.0, 200.0, 6, rng);
  const SignalDataset ds = ingest_audiovisual(av.video, av.audio);
  EXPECT_EQ(ds.output_dims, 9);
  EXPECT_EQ(ds.input_dims, 3);
  const Index Pv = 4 * 3 * 3;
  ASSERT_EQ(ds.num_points(), Pv + av.audio.frames());
  for (Index p = 0; p < ds.num_points(); ++p) {
    const bool video = p < Pv;
    for (int o = 0; o < 9; ++o) EXPECT_EQ(ds.mask(p, o), (o < 3) == video ? 1.0f : 0.0f);
    if (!video) {
      EXPECT_EQ(ds.coords(p, 0), 0.0f);
      EXPECT_EQ(ds.coords(p, 1), 0.0f);
    }
  }
}

TEST(AudioVisual, SpanMismatchIsRejected) {
  Rng rng(9);
  AudioVisualClip av = synth_audiovisual(4, 3, 3, 4.0, 200.0, 1, rng);
  av.audio.samples.conservativeResize(av.audio.frames() / 2, 1);
  EXPECT_THROW(ingest_audiovisual(av.video, av.audio), IngestError);
}

TEST(Voxel, CubeCorners) {
  const SignalDataset ds = ingest_voxel(sphere_voxels(2, 10.0));
  ASSERT_EQ(ds.num_points(), 8);
  for (Index p = 0; p < 8; ++p)
    for (int d = 0; d < 3; ++d) EXPECT_EQ(std::abs(ds.coords(p, d)), 1.0f);
}

TEST(Voxel, EmptyGridHasZeroTargets) {
  EXPECT_TRUE((ingest_voxel(VoxelGrid::empty(3, 3, 3)).targets.array() == 0.0f).all());
}

TEST(Voxel, SphereRoundTripsThroughPointsAndFile) {
  Scratch s;
  const VoxelGrid g = sphere_voxels(16, 0.7);
  const SignalDataset ds = ingest_voxel(g);
  EXPECT_EQ(reassemble_voxel(ds.signals[0], ds.targets).occupied, g.occupied);
  write_voxel(s.dir / "s.vox", g);
  EXPECT_EQ(read_voxel(s.dir / "s.vox").occupied, g.occupied);
  EXPECT_EQ(fs::file_size(s.dir / "s.vox"), 8u + 16u * 16u * 16u / 8u);
}

TEST(Dataset, AppendSubsetAndLabels) {
  Rng rng(10);
  SignalDataset ds;
  for (int i = 0; i < 3; ++i) {
    SignalDataset one = ingest_image(random_image(2, 3, 1, rng), "s" + std::to_string(i));
    one.signals[0].label = i;
    ds.append(one);
  }
  EXPECT_EQ(ds.num_points(), 18);
  EXPECT_EQ(ds.signals[2].offset, 12);
  EXPECT_EQ(ds.signal_of_point[13], 2);
  EXPECT_EQ(ds.labels(), (std::vector<int>{0, 1, 2}));
  const SignalDataset sub = ds.subset({2, 0});
  EXPECT_EQ(sub.signals[0].id, "s2");
  EXPECT_EQ(sub.signal_of_point[0], 0);
  EXPECT_TRUE(sub.targets.topRows(6) == ds.targets.middleRows(12, 6));
  SignalDataset audio = ingest_audio(clip_of({1, 2}));
  EXPECT_THROW(ds.append(audio), ConfigError);
}

TEST(Manifest, RoundTripAndIngest) {
  Scratch s;
  Rng rng(11);
  write_png(s.dir / "a.png", random_image(4, 4, 1, rng));
  write_wav(s.dir / "t.wav", clip_of({0.5, -0.5, 0.25, 0.0}, 4.0));
  Manifest m;
  ManifestEntry img;
  img.id = "img";
  img.modality = Modality::Image;
  img.path = "a.png";
  img.label = 1;
  img.augmentations = 2;
  m.entries.push_back(img);
  write_manifest(s.dir / "m.json", m);
  const Manifest back = read_manifest(s.dir / "m.json");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].augmentations, 2);
  const SignalDataset ds = ingest_manifest(back, 3);
  ASSERT_EQ(ds.num_signals(), 3);
  EXPECT_EQ(ds.labels(), (std::vector<int>{1, 1, 1}));
  EXPECT_TRUE(ingest_manifest(back, 3).targets == ds.targets);
}

TEST(Manifest, MissingFilesNameThePath) {
  Scratch s;
  try {
    read_manifest(s.dir / "nope.json");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
  }
  std::ofstream(s.dir / "m.json") << R"({"signals": [{"id": "x", "modality": "image", "path": "gone.png"}]})";
  try {
    ingest_manifest(read_manifest(s.dir / "m.json"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("gone.png"), std::string::npos);
  }
}

TEST(Augment, FlipAndCropKeepShape) {
  Rng rng(12);
  const Image img = random_image(8, 8, 1, rng);
  const Image a = augment_image(img, rng);
  EXPECT_EQ(a.height, 8);
  EXPECT_EQ(a.data.size(), img.data.size());
  const auto copies = expand_augmentations({{"d", img, 4}}, 3, rng);
  ASSERT_EQ(copies.size(), 4u);
  EXPECT_EQ(copies[0].image.data, img.data);
  EXPECT_EQ(copies[1].id, "d#aug0");
  EXPECT_EQ(copies[3].id, "d#aug2");
  EXPECT_EQ(copies[2].label, 4);
}
