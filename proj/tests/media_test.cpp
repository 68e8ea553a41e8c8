#include <fstream>

#include "dfvpo/manifest.hpp"
#include "dfvpo/media.hpp"
#include "test_util.hpp"

namespace dfvpo {
namespace {

using testing::TempDir;

TEST(Sprite, ZeroMotionGivesIdenticalFrames) {
  SpriteSceneConfig c;
  c.height = 8;
  c.width = 8;
  c.num_frames = 5;
  c.sprite_size = 3;
  c.velocity = {0, 0};
  c.seed = 4;
  const Video v = synth_moving_sprite(c);
  for (std::size_t t = 1; t < 5; ++t) {
    auto a = v.frame(0);
    auto b = v.frame(t);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Sprite, SameSeedIsByteIdentical) {
  SpriteSceneConfig c;
  c.seed = 99;
  c.shape = SpriteShape::Disc;
  c.channels = 3;
  EXPECT_EQ(encode_vraw(synth_moving_sprite(c)), encode_vraw(synth_moving_sprite(c)));
}

TEST(Sprite, DiagonalSquareReachesRowsFourAndFive) {
  SpriteSceneConfig c;
  c.height = 8;
  c.width = 8;
  c.num_frames = 4;
  c.sprite_size = 2;
  c.start = std::array<int, 2>{1, 1};
  c.velocity = {1, 1};
  const Video v = synth_moving_sprite(c);
  EXPECT_EQ(v.dtype(), Dtype::F64);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const bool inside = (y == 4 || y == 5) && (x == 4 || x == 5);
      EXPECT_EQ(v.at(3, y, x, 0), inside ? 1.0 : 0.0) << y << "," << x;
    }
}

TEST(Sprite, LeavingTheGridIsRejected) {
  SpriteSceneConfig c;
  c.height = 8;
  c.width = 8;
  c.num_frames = 4;
  c.sprite_size = 2;
  c.start = std::array<int, 2>{5, 1};
  c.velocity = {1, 0};
  EXPECT_ERRC(synth_moving_sprite(c), Errc::ConfigOutOfBounds);
  c.start.reset();
  c.velocity = {0, 3};  // 2 + 9 > 8 wherever it starts
  EXPECT_ERRC(synth_moving_sprite(c), Errc::ConfigOutOfBounds);
}

TEST(Sprite, StaysInsideForRandomStarts) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SpriteSceneConfig c;
    c.seed = seed;
    c.sprite_size = 4 + seed % 5;
    c.velocity = {static_cast<int>(seed % 3) - 1, 1};
    const Video v = synth_moving_sprite(c);
    for (std::size_t t = 0; t < c.num_frames; ++t) {
      double mass = 0.0;
      for (double x : v.frame(t)) mass += x;
      EXPECT_EQ(mass, static_cast<double>(c.sprite_size * c.sprite_size));
    }
  }
}

TEST(Vraw, FloatRoundTripIsExact) {
  TempDir dir("media");
  const Video v = testing::random_video({3, 4, 4, 3}, 1).with_id("clip-7");
  save_video(v, dir / "a.vraw");
  const Video back = load_video(dir / "a.vraw");
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.dtype(), Dtype::F64);
}

TEST(Vraw, U8RoundTripIsExact) {
  TempDir dir("media");
  std::vector<double> data(2 * 3 * 5 * 1);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>((i * 37) % 256);
  const Video v(Shape{2, 3, 5, 1}, Dtype::U8, data, "u8clip", 24.0);
  save_video(v, dir / "b.vraw");
  EXPECT_EQ(load_video(dir / "b.vraw"), v);
}

TEST(Vraw, HeaderLayout) {
  const Video v = testing::constant_video({2, 3, 4, 1}, 0.25);
  const std::string bytes = encode_vraw(v);
  EXPECT_EQ(bytes.substr(0, 4), "DFVP");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 1u);
  EXPECT_EQ(bytes.substr(32 + 24 * 8, 4), "META");
}

TEST(Vraw, WrongMagicIsRejected) {
  std::string bytes = encode_vraw(testing::constant_video({1, 2, 2, 1}, 0.0));
  bytes[0] = 'X';
  EXPECT_ERRC(decode_vraw(bytes), Errc::MagicMismatch);
}

TEST(Vraw, ShortPayloadIsRejected) {
  const std::string bytes = encode_vraw(testing::constant_video({2, 2, 2, 1}, 0.0));
  EXPECT_ERRC(decode_vraw(bytes.substr(0, 32 + 10)), Errc::TruncatedPayload);
  EXPECT_ERRC(decode_vraw(bytes.substr(0, 20)), Errc::TruncatedPayload);
}

TEST(Vraw, TrailerIsOptional) {
  const Video v = testing::random_video({2, 2, 2, 1}, 3);
  const std::string bytes = encode_vraw(v).substr(0, 32 + 8 * 8);
  const Video back = decode_vraw(bytes, "bare");
  EXPECT_TRUE(back.same_samples(v));
  EXPECT_EQ(back.id(), "bare");
}

TEST(Vraw, MissingParentDirectoryIsIoError) {
  TempDir dir("media");
  EXPECT_ERRC(save_video(testing::constant_video({1, 1, 1, 1}, 0.0), dir / "no/such/x.vraw"), Errc::IoError);
}

void write_frame(const fs::path& path, std::size_t h, std::size_t w, std::uint8_t value) {
  Raster r{h, w, 1, std::vector<std::uint8_t>(h * w, value)};
  std::ofstream(path, std::ios::binary) << encode_pnm(r);
}

TEST(ImageDirectory, LoadsFramesInLexicalOrder) {
  TempDir dir("media");
  for (std::uint8_t t = 0; t < 7; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05d.pgm", static_cast<int>(t));
    write_frame(dir / name, 3, 4, static_cast<std::uint8_t>(10 * t));
  }
  const Video v = load_video(dir.path());
  EXPECT_EQ(v.dtype(), Dtype::U8);
  EXPECT_EQ(v.shape(), (Shape{7, 3, 4, 1}));
  for (std::size_t t = 0; t < 7; ++t) EXPECT_EQ(v.at(t, 2, 3, 0), 10.0 * static_cast<double>(t));
}

TEST(ImageDirectory, MismatchedFrameIsHeterogeneous) {
  TempDir dir("media");
  for (int t = 0; t < 7; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05d.pgm", t);
    write_frame(dir / name, t == 4 ? 5 : 3, 4, 0);
  }
  EXPECT_ERRC(load_video(dir.path()), Errc::HeterogeneousFrames);
}

TEST(Quantize, Endpoints) {
  const Video u(Shape{1, 1, 3, 1}, Dtype::U8, {255.0, 128.0, 0.0});
  const Video f = to_float(u);
  EXPECT_EQ(f.data()[0], 1.0);
  EXPECT_EQ(f.data()[1], 128.0 / 255.0);
  EXPECT_EQ(to_u8(f), u);
}

TEST(Quantize, FloatToU8Arithmetic) {
  const Video f(Shape{1, 1, 4, 1}, Dtype::F64, {0.5019607843, 0.2, 1.0, 0.0});
  const Video u = to_u8(f);
  EXPECT_EQ(u.data()[0], 128.0);
  EXPECT_EQ(u.data()[1], 51.0);
  EXPECT_EQ(u.data()[2], 255.0);
  EXPECT_EQ(quantize_u8(1.7), 255.0);
  EXPECT_EQ(quantize_u8(-0.2), 0.0);
  EXPECT_EQ(std::round(0.5), 1.0);  // ties go away from zero
}

TEST(Manifest, DuplicateIdsAreRejected) {
  TempDir dir("media");
  DatasetManifest m;
  m.entries.push_back({"same", "a.vraw", 0, 0, ""});
  m.entries.push_back({"same", "b.vraw", 0, 0, ""});
  EXPECT_ERRC(write_manifest(m, dir / "m.jsonl"), Errc::InvalidConfig);
}

TEST(Quantize, EveryByteSurvivesTheRoundTrip) {
  std::vector<double> all(256);
  for (std::size_t i = 0; i < 256; ++i) all[i] = static_cast<double>(i);
  const Video u(Shape{1, 16, 16, 1}, Dtype::U8, all);
  EXPECT_EQ(to_u8(to_float(u)), u);
}

TEST(VideoType, RejectsBadShapesAndValues) {
  EXPECT_ERRC(Video(Shape{1, 1, 1, 2}, Dtype::F64, {0.0, 0.0}), Errc::InvalidVideo);
  EXPECT_ERRC(Video(Shape{1, 1, 2, 1}, Dtype::F64, {0.0}), Errc::InvalidVideo);
  EXPECT_ERRC(Video(Shape{1, 1, 1, 1}, Dtype::F64, {1.5}), Errc::InvalidVideo);
  EXPECT_ERRC(Video(Shape{1, 1, 1, 1}, Dtype::U8, {3.5}), Errc::InvalidVideo);
}

TEST(Manifest, RoundTripKeepsOrder) {
  TempDir dir("media");
  DatasetManifest m;
  for (int i = 0; i < 3; ++i)
    m.entries.push_back({"v" + std::to_string(i), "videos/v" + std::to_string(i) + ".vraw", i * 2,
                         static_cast<std::uint64_t>(i), "abc"});
  write_manifest(m, dir / "manifest.jsonl");
  const DatasetManifest back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.entries.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back.entries[i].video_path, m.entries[i].video_path);
    EXPECT_EQ(back.entries[i].condition_label, i * 2);
  }
}

}  // namespace
}  // namespace dfvpo
