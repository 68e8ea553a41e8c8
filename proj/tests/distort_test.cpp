#include <algorithm>
#include <map>

#include "dfvpo/distort.hpp"
#include "test_util.hpp"

namespace dfvpo {
namespace {

using testing::constant_video;
using testing::frames_video;
using testing::random_video;

std::vector<double> frame_values(const Video& v) {
  std::vector<double> out;
  for (std::size_t t = 0; t < v.shape().frames; ++t) out.push_back(v.frame(t)[0]);
  return out;
}

TEST(Reverse, ThreeFrames) {
  EXPECT_EQ(frame_values(reverse(frames_video({0.1, 0.2, 0.3}))), (std::vector<double>{0.3, 0.2, 0.1}));
}

TEST(Reverse, SingleFrameIsFixed) {
  const Video v = random_video({1, 3, 3, 1}, 5);
  EXPECT_EQ(reverse(v), v);
}

TEST(Reverse, IsAnInvolution) {
  const Video v = random_video({16, 4, 4, 3}, 6);
  EXPECT_EQ(reverse(reverse(v)), v);
}

TEST(Shuffle, MaximumBlockForFortyNineFrames) { EXPECT_EQ(max_shuffle_block(49), 9u); }

TEST(Shuffle, TwoFrameBlockSwaps) {
  const Video v = frames_video({0, .1, .2, .3, .4, .5, .6, .7, .8, .9});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Video out = partial_shuffle(v, TemporalSpec::shuffle(4, 2, seed));
    EXPECT_EQ(frame_values(out), (std::vector<double>{0, .1, .2, .3, .5, .4, .6, .7, .8, .9}));
  }
}

TEST(Shuffle, FiveFramesCannotHoldABlock) {
  const Video v = frames_video({.1, .2, .3, .4, .5});
  EXPECT_ERRC(partial_shuffle(v, TemporalSpec::shuffle(0, 2, 1)), Errc::BlockTooLong);
}

TEST(Shuffle, BlockPastTheEndIsRejected) {
  const Video v = random_video({10, 2, 2, 1}, 1);
  EXPECT_ERRC(partial_shuffle(v, TemporalSpec::shuffle(9, 2, 1)), Errc::BlockOutOfRange);
  EXPECT_ERRC(partial_shuffle(v, TemporalSpec::shuffle(0, 1, 1)), Errc::InvalidSpec);
}

TEST(Shuffle, PermutationIsNeverIdentity) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto p = shuffle_permutation(2 + seed % 3, seed);
    bool moved = false;
    for (std::size_t i = 0; i < p.size(); ++i) moved |= p[i] != i;
    EXPECT_TRUE(moved) << seed;
  }
}

TEST(Shuffle, PermutationsOfThreeAreNearUniform) {
  // Five non-identity arrangements, each expected 1/5 of the time.
  std::map<std::vector<std::size_t>, int> counts;
  const int n = 20000;
  for (int seed = 0; seed < n; ++seed) ++counts[shuffle_permutation(3, static_cast<std::uint64_t>(seed) * 7919)];
  EXPECT_EQ(counts.size(), 5u);
  double chi2 = 0.0;
  for (const auto& [perm, c] : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
  EXPECT_LT(chi2, 18.47);  // chi-square(4) upper 0.1% point
}

TEST(Shuffle, LocalityAndMultiset) {
  for (std::uint32_t seed = 0; seed < 200; ++seed) {
    const std::size_t frames = 10 + seed % 30;
    std::vector<double> values(frames);
    for (std::size_t t = 0; t < frames; ++t) values[t] = static_cast<double>(t) / static_cast<double>(frames);
    const Video v = frames_video(values);
    const std::size_t len = 2 + seed % (max_shuffle_block(frames) - 1);
    const std::size_t start = (seed * 13) % (frames - len + 1);
    const Video out = partial_shuffle(v, TemporalSpec::shuffle(start, len, seed));
    auto got = frame_values(out);
    for (std::size_t t = 0; t < frames; ++t)
      if (t < start || t >= start + len) {
        EXPECT_EQ(got[t], values[t]);
      }
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, values);
    EXPECT_EQ(partial_shuffle(v, TemporalSpec::shuffle(start, len, seed)), out);
  }
}

TEST(Kernel, RadiusAndNormalization) {
  for (double sigma : {0.3, 0.5, 1.0, 1.7, 2.0, 3.3}) {
    const auto k = gaussian_kernel(sigma);
    EXPECT_EQ(k.size(), 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
    double sum = 0.0;
    for (double w : k) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-15);
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_EQ(k[i], k[k.size() - 1 - i]);
  }
  EXPECT_EQ(gaussian_kernel(0.0), std::vector<double>{1.0});
}

// Direct 2D convolution over an explicitly mirrored, padded copy.
std::vector<double> brute_force_blur(const std::vector<double>& img, std::size_t h, std::size_t w,
                                     const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  auto mirror = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> out(h * w, 0.0);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx)
          out[y * w + x] += k[dy + r] * k[dx + r] *
                            img[mirror(y + dy, static_cast<long>(h)) * w + mirror(x + dx, static_cast<long>(w))];
  return out;
}

TEST(Blur, ThreePixelExampleMatchesBruteForce) {
  const std::vector<double> img{0.0, 1.0, 0.0};
  const std::vector<double> k{0.25, 0.5, 0.25};
  const auto oracle = brute_force_blur(img, 1, 3, k);
  const auto got = blur_plane(img, 1, 3, 1, k);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(oracle[i], 0.5, 1e-15);
    EXPECT_NEAR(got[i], oracle[i], 1e-15);
  }
}

TEST(Blur, SeparableMatchesBruteForceOnRandomFrames) {
  for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
    const std::size_t h = 5, w = 7;  // sigma 4 has a kernel wider than the frame
    const Video v = random_video({1, h, w, 1}, static_cast<std::uint32_t>(sigma * 10));
    const std::vector<double> img(v.data().begin(), v.data().end());
    const auto k = gaussian_kernel(sigma);
    const auto oracle = brute_force_blur(img, h, w, k);
    const auto got = blur_plane(img, h, w, 1, k);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(got[i], oracle[i], 1e-13);
  }
}

TEST(Spatial, AllZeroSpecIsRejected) {
  EXPECT_ERRC(spatial_degrade(constant_video({1, 2, 2, 1}, 0.5), SpatialSpec{}), Errc::InvalidSpec);
}

TEST(Spatial, ColorShiftOnConstantFrame) {
  SpatialSpec s;
  s.color_shift = {0.2, 0.0, 0.0};
  const Video out = spatial_degrade(constant_video({2, 3, 3, 1}, 0.5), s);
  for (double x : out.data()) EXPECT_NEAR(x, 0.7, 1e-15);
}

TEST(Spatial, BlurFixesConstantFrames) {
  SpatialSpec s;
  s.blur_sigma = 1.3;
  const Video v = constant_video({2, 6, 5, 3}, 0.37);
  const Video out = spatial_degrade(v, s);
  for (double x : out.data()) EXPECT_NEAR(x, 0.37, 1e-12);
}

TEST(Spatial, OutputStaysInUnitRange) {
  for (std::uint32_t seed = 0; seed < 30; ++seed) {
    SpatialSpec s;
    s.noise_sigma = 0.5;
    s.color_shift = {0.5, -0.5, 0.3};
    s.blur_sigma = 0.7;
    s.seed = seed;
    for (double x : spatial_degrade(random_video({2, 5, 5, 3}, seed), s).data()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(Spatial, NoiseIsKeyedBySeedFrameAndElement) {
  SpatialSpec s;
  s.noise_sigma = 0.01;
  s.seed = 77;
  const Video v = constant_video({3, 4, 4, 1}, 0.5);
  const Video out = spatial_degrade(v, s);
  EXPECT_EQ(spatial_degrade(v, s), out);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_EQ(out.frame(t)[i], std::clamp(0.5 + 0.01 * rng::gaussian(77, t, i), 0.0, 1.0));
  s.seed = 78;
  EXPECT_FALSE(spatial_degrade(v, s).same_samples(out));
}

TEST(Spatial, ShiftOnlyAffectsPresentChannels) {
  SpatialSpec s;
  s.color_shift = {0.0, 0.1, 0.0};
  EXPECT_ERRC(spatial_degrade(constant_video({1, 2, 2, 1}, 0.5), s), Errc::InvalidSpec);
}

TEST(Spatial, U8InputIsRejected) {
  SpatialSpec s;
  s.blur_sigma = 1.0;
  const Video u(Shape{1, 1, 1, 1}, Dtype::U8, {3.0});
  EXPECT_ERRC(spatial_degrade(u, s), Errc::DtypeMismatch);
}

TEST(Hybrid, NeedsANonTrivialSpatialPart) {
  EXPECT_ERRC(hybrid_distort(random_video({4, 2, 2, 1}, 1), TemporalSpec::reversal(), SpatialSpec{}),
              Errc::InvalidSpec);
}

TEST(Hybrid, EqualsComposition) {
  for (std::uint32_t seed = 0; seed < 20; ++seed) {
    const Video v = random_video({12, 4, 4, 3}, seed);
    SpatialSpec s;
    s.blur_sigma = 0.8;
    s.noise_sigma = 0.05;
    s.color_shift = {0.02, -0.03, 0.01};
    s.seed = seed;
    const TemporalSpec t = seed % 2 ? TemporalSpec::reversal() : TemporalSpec::shuffle(seed % 8, 2, seed);
    EXPECT_EQ(hybrid_distort(v, t, s), spatial_degrade(apply_temporal(v, t), s));
  }
}

TEST(Hybrid, ReversalPlusShift) {
  const Video v = frames_video({0.1, 0.3, 0.5, 0.95});
  SpatialSpec s;
  s.color_shift = {0.1, 0.0, 0.0};
  const Video out = hybrid_distort(v, TemporalSpec::reversal(), s);
  EXPECT_NEAR(out.frame(0)[0], 1.0, 1e-15);  // clamp(0.95 + 0.1)
  EXPECT_NEAR(out.frame(3)[0], 0.2, 1e-15);
}

TEST(Pair, PalindromeDefeatsReversal) {
  EXPECT_ERRC(make_pair(frames_video({0.2, 0.6, 0.2}), 0, TemporalSpec::reversal(), {}), Errc::LoseEqualsWin);
}

TEST(Pair, WinIsTheInputAndPairsAreDeterministic) {
  const Video v = random_video({10, 3, 3, 1}, 9);
  const DistortionSpec spec = TemporalSpec::shuffle(3, 2, 5);
  const auto a = make_pair(v, 2, spec, {"rand", 0, 0});
  const auto b = make_pair(v, 2, spec, {"rand", 0, 0});
  EXPECT_EQ(a.win, v);
  EXPECT_EQ(a.lose, b.lose);
  EXPECT_EQ(a.lose.shape(), a.win.shape());
  EXPECT_FALSE(a.lose.same_samples(a.win));
}

TEST(Curriculum, StageIndex) {
  CurriculumSchedule c = default_curriculum(100);
  EXPECT_EQ(curriculum_update(c, 0), 0u);
  EXPECT_EQ(curriculum_update(c, 99), 0u);
  EXPECT_EQ(curriculum_update(c, 250), 2u);
  EXPECT_EQ(curriculum_update(c, 1000000), 2u);
}

TEST(Curriculum, DefaultsAreMonotone) {
  const auto c = default_curriculum();
  EXPECT_EQ(c.update_interval, 700u);
  EXPECT_EQ(c.stages.size(), 3u);
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.stages[0].noise_sigma, 0.20);
  EXPECT_EQ(c.stages[2].blur_sigma, 0.5);
}

TEST(Curriculum, IncreasingSeverityIsRejected) {
  CurriculumSchedule c = default_curriculum();
  std::swap(c.stages[0], c.stages[2]);
  EXPECT_ERRC(validate(c), Errc::InvalidConfig);
}

TEST(Curriculum, JsonRoundTrip) {
  const auto c = default_curriculum(123);
  const auto back = curriculum_from_json(to_json(c));
  EXPECT_EQ(back.update_interval, 123u);
  EXPECT_EQ(back.stages, c.stages);
  EXPECT_EQ(back.mode, c.mode);
}

TEST(DrawSpec, RespectsBlockLimitAndStage) {
  const Shape shape{16, 8, 8, 1};
  const auto stage = default_curriculum().stages[1];
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    const DistortionSpec spec = draw_spec(stage, DistortionMode::Mixed, shape, seed);
    EXPECT_EQ(to_json(draw_spec(stage, DistortionMode::Mixed, shape, seed)), to_json(spec));
    const TemporalSpec* t = std::get_if<TemporalSpec>(&spec);
    if (const auto* h = std::get_if<HybridSpec>(&spec)) t = &h->temporal;
    if (t) {
      EXPECT_NO_THROW(validate(*t, shape.frames));
    }
    if (const auto* s = std::get_if<SpatialSpec>(&spec)) {
      EXPECT_EQ(s->blur_sigma, stage.blur_sigma);
      EXPECT_LE(std::abs(s->color_shift[0]), stage.max_color_shift);
      EXPECT_EQ(s->color_shift[1], 0.0);
    }
  }
}

TEST(SpecJson, RoundTrip) {
  SpatialSpec s;
  s.blur_sigma = 0.5;
  s.noise_sigma = 0.1;
  s.color_shift = {0.01, 0.02, -0.03};
  s.seed = 0xFFFFFFFFFFFFFFFFULL;
  for (const DistortionSpec& spec : {DistortionSpec{TemporalSpec::reversal()},
                                     DistortionSpec{TemporalSpec::shuffle(3, 4, 99)}, DistortionSpec{s},
                                     DistortionSpec{HybridSpec{TemporalSpec::shuffle(1, 2, 7), s}}})
    EXPECT_EQ(spec_from_json(to_json(spec)), spec);
}

TEST(PairManifest, RoundTrip) {
  testing::TempDir dir("distort");
  std::vector<PairRecord> recs{{"videos/a-win.vraw", "videos/a-0-lose.vraw", 3, TemporalSpec::shuffle(1, 2, 5),
                                {"a", 1, 0}}};
  write_pair_manifest(recs, dir / "pairs.jsonl");
  const auto back = read_pair_manifest(dir / "pairs.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].lose_path, recs[0].lose_path);
  EXPECT_EQ(back[0].condition, 3);
  EXPECT_EQ(back[0].spec, recs[0].spec);
  EXPECT_EQ(back[0].provenance, recs[0].provenance);
}

}  // namespace
}  // namespace dfvpo
