#pragma once

// Lose-case manufacturing: temporal remaps, spatial degradation, their
// composition, pair assembly and the curriculum that schedules severity.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dfvpo/error.hpp"
#include "dfvpo/manifest.hpp"
#include "dfvpo/media.hpp"
#include "dfvpo/rng.hpp"

namespace dfvpo {

// ---------------------------------------------------------------------------
// Specs

enum class TemporalKind { GlobalReversal, PartialShuffle };

struct TemporalSpec {
  TemporalKind kind = TemporalKind::GlobalReversal;
  std::size_t block_start = 0;  // shuffle only
  std::size_t block_len = 0;    // shuffle only
  std::uint64_t seed = 0;       // shuffle only

  static TemporalSpec reversal() { return {}; }
  static TemporalSpec shuffle(std::size_t start, std::size_t len, std::uint64_t seed) {
    return {TemporalKind::PartialShuffle, start, len, seed};
  }
  bool operator==(const TemporalSpec&) const = default;
};

struct SpatialSpec {
  double blur_sigma = 0.0;
  std::array<double, 3> color_shift{0.0, 0.0, 0.0};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const SpatialSpec&) const = default;
};

struct HybridSpec {
  TemporalSpec temporal;
  SpatialSpec spatial;
  bool operator==(const HybridSpec&) const = default;
};

using DistortionSpec = std::variant<TemporalSpec, SpatialSpec, HybridSpec>;

/// Largest legal shuffle block for a clip of `frames` frames: floor(0.2 * T).
constexpr std::size_t max_shuffle_block(std::size_t frames) noexcept { return frames / 5; }

inline void validate(const TemporalSpec& s, std::size_t frames) {
  if (s.kind != TemporalKind::PartialShuffle) return;
  require(s.block_len >= 2, Errc::InvalidSpec, "shuffle block must hold at least 2 frames");
  require(s.block_len <= max_shuffle_block(frames), Errc::BlockTooLong,
          "block_len " + std::to_string(s.block_len) + " exceeds floor(0.2*T) = " +
              std::to_string(max_shuffle_block(frames)));
  require(s.block_start + s.block_len <= frames, Errc::BlockOutOfRange, "shuffle block runs past the last frame");
}

/// Rejects specs that would leave the video unchanged, and out-of-range values.
inline void validate(const SpatialSpec& s, std::size_t channels = 3) {
  require(std::isfinite(s.blur_sigma) && s.blur_sigma >= 0.0, Errc::InvalidSpec, "blur_sigma must be >= 0");
  require(std::isfinite(s.noise_sigma) && s.noise_sigma >= 0.0, Errc::InvalidSpec, "noise_sigma must be >= 0");
  bool any_shift = false;
  for (std::size_t c = 0; c < 3; ++c) {
    require(s.color_shift[c] >= -0.5 && s.color_shift[c] <= 0.5, Errc::InvalidSpec,
            "color_shift must lie in [-0.5, 0.5]");
    if (c < channels && s.color_shift[c] != 0.0) any_shift = true;
  }
  require(s.blur_sigma > 0.0 || s.noise_sigma > 0.0 || any_shift, Errc::InvalidSpec,
          "spatial spec is the identity (no blur, shift or noise)");
}

// ---------------------------------------------------------------------------
// Temporal operators

namespace detail {

inline Video remap_frames(const Video& v, const std::vector<std::size_t>& source_of) {
  std::vector<double> out;
  out.reserve(v.shape().size());
  for (std::size_t src : source_of) {
    auto f = v.frame(src);
    out.insert(out.end(), f.begin(), f.end());
  }
  return v.with_data(std::move(out));
}

}  // namespace detail

/// Output frame t is input frame T+1-t (1-indexed).
inline Video reverse(const Video& v) {
  std::vector<std::size_t> src(v.shape().frames);
  for (std::size_t t = 0; t < src.size(); ++t) src[t] = src.size() - 1 - t;
  return detail::remap_frames(v, src);
}

/// The permutation applied inside the block, as source offsets. Redraws with
/// seed+1, seed+2, ... until the draw is not the identity.
inline std::vector<std::size_t> shuffle_permutation(std::size_t block_len, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    rng::Stream s(seed + attempt, 0x5AFF1E);
    auto p = rng::permutation(block_len, s);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] != i) return p;
  }
}

inline Video partial_shuffle(const Video& v, const TemporalSpec& spec) {
  require(spec.kind == TemporalKind::PartialShuffle, Errc::InvalidSpec, "spec is not a partial shuffle");
  validate(spec, v.shape().frames);
  std::vector<std::size_t> src(v.shape().frames);
  std::iota(src.begin(), src.end(), std::size_t{0});
  const auto perm = shuffle_permutation(spec.block_len, spec.seed);
  for (std::size_t i = 0; i < spec.block_len; ++i) src[spec.block_start + i] = spec.block_start + perm[i];
  return detail::remap_frames(v, src);
}

inline Video apply_temporal(const Video& v, const TemporalSpec& spec) {
  return spec.kind == TemporalKind::GlobalReversal ? reverse(v) : partial_shuffle(v, spec);
}

// ---------------------------------------------------------------------------
// Spatial operators

/// Sampled Gaussian, radius ceil(3 sigma), normalized to sum 1. sigma = 0
/// yields the unit impulse.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

/// Mirror index about the edge samples (d c b | a b c d | c b a), repeated
/// as often as needed for kernels wider than the signal.
constexpr std::size_t reflect_index(long i, std::size_t n) noexcept {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

/// Separable convolution of one H x W x C plane with `kernel` along rows and
/// then columns, reflect-padded.
inline std::vector<double> blur_plane(std::span<const double> plane, std::size_t height, std::size_t width,
                                      std::size_t channels, std::span<const double> kernel) {
  const long radius = static_cast<long>(kernel.size() / 2);
  std::vector<double> tmp(plane.size());
  std::vector<double> out(plane.size());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          const std::size_t xx = reflect_index(static_cast<long>(x) + k, width);
          acc += kernel[static_cast<std::size_t>(k + radius)] * plane[(y * width + xx) * channels + c];
        }
        tmp[(y * width + x) * channels + c] = acc;
      }
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          const std::size_t yy = reflect_index(static_cast<long>(y) + k, height);
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[(yy * width + x) * channels + c];
        }
        out[(y * width + x) * channels + c] = acc;
      }
  return out;
}

/// Per frame: blur, add color shift, add N(0, noise_sigma^2) keyed by
/// (seed, frame index, element index), clamp to [0, 1].
inline Video spatial_degrade(const Video& v, const SpatialSpec& spec) {
  require(v.dtype() == Dtype::F64, Errc::DtypeMismatch, "spatial_degrade needs a float video");
  const Shape& s = v.shape();
  validate(spec, s.channels);
  const auto kernel = gaussian_kernel(spec.blur_sigma);
  std::vector<double> out;
  out.reserve(s.size());
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::vector<double> f = spec.blur_sigma > 0.0 ? blur_plane(v.frame(t), s.height, s.width, s.channels, kernel)
                                                  : std::vector<double>(v.frame(t).begin(), v.frame(t).end());
    for (std::size_t i = 0; i < f.size(); ++i) {
      double x = f[i] + spec.color_shift[i % s.channels];
      if (spec.noise_sigma > 0.0) x += spec.noise_sigma * rng::gaussian(spec.seed, t, i);
      out.push_back(std::clamp(x, 0.0, 1.0));
    }
  }
  return v.with_data(std::move(out));
}

/// Temporal remap first, then spatial degradation of the remapped clip.
inline Video hybrid_distort(const Video& v, const TemporalSpec& t_spec, const SpatialSpec& s_spec) {
  require(v.dtype() == Dtype::F64, Errc::DtypeMismatch, "hybrid_distort needs a float video");
  validate(s_spec, v.shape().channels);
  validate(t_spec, v.shape().frames);
  return spatial_degrade(apply_temporal(v, t_spec), s_spec);
}

inline Video distort(const Video& v, const DistortionSpec& spec) {
  return std::visit(
      [&](const auto& s) -> Video {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TemporalSpec>) return apply_temporal(v, s);
        else if constexpr (std::is_same_v<S, SpatialSpec>) return spatial_degrade(v, s);
        else return hybrid_distort(v, s.temporal, s.spatial);
      },
      spec);
}

// ---------------------------------------------------------------------------
// Pairs

struct Provenance {
  std::string source_video_id;
  std::size_t curriculum_stage = 0;
  std::uint64_t creation_step = 0;
  bool operator==(const Provenance&) const = default;
};

struct PreferencePair {
  Video win;
  Video lose;
  int condition = 0;
  DistortionSpec spec;
  Provenance provenance;
};

inline PreferencePair make_pair(const Video& v, int condition, const DistortionSpec& spec, Provenance provenance) {
  require(v.dtype() == Dtype::F64, Errc::DtypeMismatch, "pairs are built from float videos");
  Video lose = distort(v, spec);
  require(!lose.same_samples(v), Errc::LoseEqualsWin,
          "distortion left video '" + v.id() + "' unchanged");
  return PreferencePair{v, lose.with_id(v.id() + "-lose"), condition, spec, std::move(provenance)};
}

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumStage {
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;
  double max_color_shift = 0.0;
  double shuffle_fraction = 0.2;
  bool operator==(const CurriculumStage&) const = default;
};

enum class DistortionMode { Temporal, Spatial, Hybrid, Mixed };

struct CurriculumSchedule {
  std::vector<CurriculumStage> stages;
  std::uint64_t update_interval = 100;  // K
  DistortionMode mode = DistortionMode::Mixed;
};

/// Strong distortions first (easy negatives), milder ones later.
inline CurriculumSchedule default_curriculum(std::uint64_t update_interval = 700) {
  return CurriculumSchedule{{{0.20, 2.0, 0.10, 0.2}, {0.10, 1.0, 0.05, 0.2}, {0.05, 0.5, 0.02, 0.2}},
                            update_interval,
                            DistortionMode::Mixed};
}

inline void validate(const CurriculumSchedule& c) {
  require(!c.stages.empty(), Errc::InvalidConfig, "curriculum needs at least one stage");
  require(c.update_interval >= 1, Errc::InvalidConfig, "curriculum update_interval must be >= 1");
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const auto& s = c.stages[i];
    require(s.noise_sigma >= 0.0 && s.blur_sigma >= 0.0 && s.max_color_shift >= 0.0 && s.max_color_shift <= 0.5,
            Errc::InvalidConfig, "stage parameters out of range");
    require(s.shuffle_fraction >= 0.0 && s.shuffle_fraction <= 0.2, Errc::InvalidConfig,
            "shuffle_fraction must lie in [0, 0.2]");
    if (i == 0) continue;
    const auto& p = c.stages[i - 1];
    require(s.noise_sigma <= p.noise_sigma && s.blur_sigma <= p.blur_sigma &&
                s.max_color_shift <= p.max_color_shift && s.shuffle_fraction <= p.shuffle_fraction,
            Errc::InvalidConfig, "curriculum severity must be non-increasing across stages");
  }
}

/// Active stage: min(floor(step / K), stages - 1).
inline std::size_t curriculum_update(const CurriculumSchedule& c, std::uint64_t step) {
  require(!c.stages.empty() && c.update_interval >= 1, Errc::InvalidConfig, "empty curriculum");
  return static_cast<std::size_t>(
      std::min<std::uint64_t>(step / c.update_interval, static_cast<std::uint64_t>(c.stages.size() - 1)));
}

/// Draws a concrete spec from a stage's severity. Shuffle blocks are resampled
/// per call; when floor(shuffle_fraction * T) < 2 the temporal part falls back
/// to global reversal.
inline DistortionSpec draw_spec(const CurriculumStage& stage, DistortionMode mode, const Shape& shape,
                                std::uint64_t seed) {
  rng::Stream s(seed, 0xD4A3);
  if (mode == DistortionMode::Mixed) mode = static_cast<DistortionMode>(s.index(3));

  auto temporal = [&]() {
    const auto by_fraction = static_cast<std::size_t>(std::floor(stage.shuffle_fraction * shape.frames + 1e-9));
    const std::size_t max_len = std::min(by_fraction, max_shuffle_block(shape.frames));
    const bool shuffle = max_len >= 2 && s.uniform() < 0.5;
    if (!shuffle) return TemporalSpec::reversal();
    const std::size_t len = 2 + s.index(max_len - 1);
    const std::size_t start = s.index(shape.frames - len + 1);
    return TemporalSpec::shuffle(start, len, s.next_bits());
  };
  auto spatial = [&]() {
    SpatialSpec sp;
    sp.blur_sigma = stage.blur_sigma;
    sp.noise_sigma = stage.noise_sigma;
    for (std::size_t c = 0; c < 3; ++c)
      sp.color_shift[c] = c < shape.channels ? stage.max_color_shift * (2.0 * s.uniform() - 1.0) : 0.0;
    sp.seed = s.next_bits();
    return sp;
  };

  switch (mode) {
    case DistortionMode::Temporal: return temporal();
    case DistortionMode::Spatial: return spatial();
    default: {
      TemporalSpec t = temporal();
      return HybridSpec{t, spatial()};
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string to_string(DistortionMode m) {
  switch (m) {
    case DistortionMode::Temporal: return "temporal";
    case DistortionMode::Spatial: return "spatial";
    case DistortionMode::Hybrid: return "hybrid";
    case DistortionMode::Mixed: return "mixed";
  }
  return "mixed";
}

inline DistortionMode parse_mode(const std::string& s) {
  if (s == "temporal") return DistortionMode::Temporal;
  if (s == "spatial") return DistortionMode::Spatial;
  if (s == "hybrid") return DistortionMode::Hybrid;
  if (s == "mixed") return DistortionMode::Mixed;
  fail(Errc::InvalidConfig, "unknown distortion mode '" + s + "'");
}

inline nlohmann::json to_json(const TemporalSpec& t) {
  if (t.kind == TemporalKind::GlobalReversal) return {{"kind", "global_reversal"}};
  return {{"kind", "partial_shuffle"}, {"block_start", t.block_start}, {"block_len", t.block_len}, {"seed", t.seed}};
}

inline nlohmann::json to_json(const SpatialSpec& s) {
  return {{"blur_sigma", s.blur_sigma}, {"color_shift", s.color_shift}, {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

inline nlohmann::json to_json(const DistortionSpec& spec) {
  return std::visit(
      [](const auto& s) -> nlohmann::json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TemporalSpec>) return {{"variant", "temporal"}, {"temporal", to_json(s)}};
        else if constexpr (std::is_same_v<S, SpatialSpec>) return {{"variant", "spatial"}, {"spatial", to_json(s)}};
        else return {{"variant", "hybrid"}, {"temporal", to_json(s.temporal)}, {"spatial", to_json(s.spatial)}};
      },
      spec);
}

inline TemporalSpec temporal_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "global_reversal") return TemporalSpec::reversal();
  require(kind == "partial_shuffle", Errc::InvalidSpec, "unknown temporal kind '" + kind + "'");
  return TemporalSpec::shuffle(j.at("block_start").get<std::size_t>(), j.at("block_len").get<std::size_t>(),
                               j.at("seed").get<std::uint64_t>());
}

inline SpatialSpec spatial_from_json(const nlohmann::json& j) {
  SpatialSpec s;
  s.blur_sigma = j.at("blur_sigma").get<double>();
  s.color_shift = j.at("color_shift").get<std::array<double, 3>>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline DistortionSpec spec_from_json(const nlohmann::json& j) {
  const auto variant = j.at("variant").get<std::string>();
  if (variant == "temporal") return temporal_from_json(j.at("temporal"));
  if (variant == "spatial") return spatial_from_json(j.at("spatial"));
  require(variant == "hybrid", Errc::InvalidSpec, "unknown distortion variant '" + variant + "'");
  return HybridSpec{temporal_from_json(j.at("temporal")), spatial_from_json(j.at("spatial"))};
}

inline nlohmann::json to_json(const CurriculumSchedule& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages)
    stages.push_back({{"noise_sigma", s.noise_sigma},
                      {"blur_sigma", s.blur_sigma},
                      {"max_color_shift", s.max_color_shift},
                      {"shuffle_fraction", s.shuffle_fraction}});
  return {{"update_interval", c.update_interval}, {"mode", to_string(c.mode)}, {"stages", stages}};
}

inline CurriculumSchedule curriculum_from_json(const nlohmann::json& j) {
  CurriculumSchedule c;
  try {
    c.update_interval = j.at("update_interval").get<std::uint64_t>();
    c.mode = parse_mode(j.value("mode", std::string("mixed")));
    for (const auto& s : j.at("stages"))
      c.stages.push_back({s.at("noise_sigma").get<double>(), s.at("blur_sigma").get<double>(),
                          s.at("max_color_shift").get<double>(), s.value("shuffle_fraction", 0.2)});
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("curriculum: ") + e.what());
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Pair manifest (JSON lines: win_path, lose_path, condition, spec, provenance)

struct PairRecord {
  std::string win_path;   // relative to the manifest's directory
  std::string lose_path;  // relative to the manifest's directory
  int condition = 0;
  DistortionSpec spec;
  Provenance provenance;
};

inline nlohmann::json to_json(const PairRecord& r) {
  return {{"win_path", r.win_path},
          {"lose_path", r.lose_path},
          {"condition", r.condition},
          {"spec", to_json(r.spec)},
          {"provenance",
           {{"source_video_id", r.provenance.source_video_id},
            {"curriculum_stage", r.provenance.curriculum_stage},
            {"creation_step", r.provenance.creation_step}}}};
}

inline void write_pair_manifest(const std::vector<PairRecord>& records, const fs::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  detail::write_jsonl(path, rows);
}

inline std::vector<PairRecord> read_pair_manifest(const fs::path& path) {
  std::vector<PairRecord> out;
  try {
    for (const auto& j : detail::read_jsonl(path)) {
      PairRecord r;
      r.win_path = j.at("win_path").get<std::string>();
      r.lose_path = j.at("lose_path").get<std::string>();
      r.condition = j.at("condition").get<int>();
      r.spec = spec_from_json(j.at("spec"));
      const auto& p = j.at("provenance");
      r.provenance = {p.at("source_video_id").get<std::string>(), p.at("curriculum_stage").get<std::size_t>(),
                      p.at("creation_step").get<std::uint64_t>()};
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
  return out;
}

/// Loads both videos of every record; paths resolve against the manifest's directory.
inline std::vector<PreferencePair> load_pairs(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  std::vector<PreferencePair> pairs;
  for (auto& r : read_pair_manifest(manifest)) {
    pairs.push_back(PreferencePair{to_float(load_video(base / r.win_path)), to_float(load_video(base / r.lose_path)),
                                   r.condition, r.spec, r.provenance});
  }
  return pairs;
}

}  // namespace dfvpo
