#pragma once

// Pipeline commands: synthetic corpus, pair manufacturing, training,
// evaluation and theory verification. Each command writes a resolved-config
// snapshot before doing any work and returns a process exit code.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfvpo/align.hpp"
#include "dfvpo/config.hpp"
#include "dfvpo/diffuse.hpp"
#include "dfvpo/distort.hpp"
#include "dfvpo/error.hpp"
#include "dfvpo/manifest.hpp"
#include "dfvpo/media.hpp"
#include "dfvpo/parallel.hpp"
#include "dfvpo/plot.hpp"
#include "dfvpo/stats.hpp"
#include "dfvpo/theory.hpp"

namespace dfvpo::cmd {

enum ExitCode : int { kSuccess = 0, kAssertionFailed = 1, kUsageError = 2, kIoError = 3 };

inline int exit_code_for(Errc e) {
  switch (e) {
    case Errc::IoError:
    case Errc::MagicMismatch:
    case Errc::TruncatedPayload:
    case Errc::HeterogeneousFrames: return kIoError;
    case Errc::InvalidConfig:
    case Errc::ConfigOutOfBounds:
    case Errc::InvalidRange:
    case Errc::InvalidSpec:
    case Errc::BlockTooLong:
    case Errc::BlockOutOfRange: return kUsageError;
    default: return kAssertionFailed;
  }
}

inline std::string error_json(const std::string& kind, const std::string& message, int code) {
  return nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump();
}

/// Set asynchronously (SIGINT); training stops at the next step boundary.
inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline const char* kSnapshotName = "resolved_config.toml";

namespace detail {

inline void log(int verbosity, int level, const std::string& msg) {
  if (verbosity >= level) std::cerr << msg << "\n";
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec && fs::is_directory(p), Errc::IoError, "cannot create directory " + p.string());
}

template <class S>
void write_snapshot(const S& s, const config::FieldSet<S>& fields, const fs::path& path) {
  dfvpo::detail::write_file(path, config::to_toml(s, fields));
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { dfvpo::detail::write_file(path, j.dump(2) + "\n"); }

inline std::string video_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vid-%05zu", i);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Videos are moving sprites; the condition label encodes shape and heading:
/// label = 4 * shape + direction, direction in (right, left, down, up).
struct SynthSettings {
  std::string out = "data";
  std::uint64_t num_videos = 200;
  std::uint64_t seed = 0;
  std::uint64_t height = 32;
  std::uint64_t width = 32;
  std::uint64_t num_frames = 16;
  std::uint64_t channels = 1;
  std::uint64_t min_sprite_size = 4;
  std::uint64_t max_sprite_size = 8;
  std::int64_t speed = 1;
  double background = 0.0;
  double foreground = 1.0;
  std::int64_t verbosity = 1;
};

inline const config::FieldSet<SynthSettings>& synth_fields() {
  using S = SynthSettings;
  static const config::FieldSet<S> f{
      config::field("out", &S::out, "output directory"),
      config::field("num_videos", &S::num_videos, "number of videos"),
      config::field("seed", &S::seed, "dataset seed"),
      config::field("height", &S::height, "frame height"),
      config::field("width", &S::width, "frame width"),
      config::field("num_frames", &S::num_frames, "frames per video"),
      config::field("channels", &S::channels, "1 or 3"),
      config::field("min_sprite_size", &S::min_sprite_size, "smallest sprite edge"),
      config::field("max_sprite_size", &S::max_sprite_size, "largest sprite edge"),
      config::field("speed", &S::speed, "pixels per frame"),
      config::field("background", &S::background, "background intensity"),
      config::field("foreground", &S::foreground, "sprite intensity"),
      config::field("verbosity", &S::verbosity, "0 quiet, 1 progress, 2 detail"),
  };
  return f;
}

inline constexpr int kSynthConditions = 8;

/// Scene parameters of the i-th video of a synth run.
inline std::pair<SpriteSceneConfig, int> synth_scene(const SynthSettings& s, std::size_t i) {
  require(s.min_sprite_size >= 1 && s.min_sprite_size <= s.max_sprite_size, Errc::ConfigOutOfBounds,
          "need 1 <= min_sprite_size <= max_sprite_size");
  const std::uint64_t sub = rng::derive(s.seed, i);
  rng::Stream r(sub, 0x5A17);
  const std::size_t shape = r.index(2);
  const std::size_t dir = r.index(4);
  const std::array<std::array<int, 2>, 4> heading{{{0, 1}, {0, -1}, {1, 0}, {-1, 0}}};
  SpriteSceneConfig c;
  c.height = s.height;
  c.width = s.width;
  c.num_frames = s.num_frames;
  c.channels = s.channels;
  c.shape = shape == 0 ? SpriteShape::Square : SpriteShape::Disc;
  c.sprite_size = s.min_sprite_size + r.index(s.max_sprite_size - s.min_sprite_size + 1);
  c.velocity = {heading[dir][0] * static_cast<int>(s.speed), heading[dir][1] * static_cast<int>(s.speed)};
  c.background = s.background;
  c.foreground = s.foreground;
  c.seed = sub;
  return {c, static_cast<int>(4 * shape + dir)};
}

inline int cmd_synth(const SynthSettings& s) {
  const fs::path out(s.out);
  detail::ensure_dir(out / "videos");
  detail::write_snapshot(s, synth_fields(), out / kSnapshotName);

  DatasetManifest m;
  m.entries.resize(s.num_videos);
  parallel_for(s.num_videos, [&](std::size_t i) {
    const auto [scene, label] = synth_scene(s, i);
    const std::string id = detail::video_id(i);
    const Video v = to_u8(synth_moving_sprite(scene)).with_id(id);
    const std::string rel = "videos/" + id + ".vraw";
    save_video(v, out / rel);
    m.entries[i] = {id, rel, label, scene.seed, config_hash(scene)};
  });
  write_manifest(m, out / "manifest.jsonl");
  detail::log(static_cast<int>(s.verbosity), 1, "synth: wrote " + std::to_string(s.num_videos) + " videos to " + s.out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// pairs

struct PairsSettings {
  std::string manifest;
  std::string out = "pairs";
  std::string curriculum;  // JSON file; empty selects the default schedule
  std::uint64_t stage = 0;
  std::string mode;  // overrides the schedule's mode when set
  std::uint64_t specs_per_video = 1;
  std::uint64_t seed = 0;
  std::int64_t verbosity = 1;
};

inline const config::FieldSet<PairsSettings>& pairs_fields() {
  using S = PairsSettings;
  static const config::FieldSet<S> f{
      config::field("manifest", &S::manifest, "dataset manifest (JSON lines)"),
      config::field("out", &S::out, "output directory"),
      config::field("curriculum", &S::curriculum, "curriculum JSON; empty for the default"),
      config::field("stage", &S::stage, "curriculum stage whose severities are used"),
      config::field("mode", &S::mode, "temporal, spatial, hybrid or mixed; empty keeps the curriculum's"),
      config::field("specs_per_video", &S::specs_per_video, "distortion draws per input video"),
      config::field("seed", &S::seed, "distortion seed"),
      config::field("verbosity", &S::verbosity, "0 quiet, 1 progress, 2 detail"),
  };
  return f;
}

inline CurriculumSchedule load_curriculum(const std::string& path) {
  if (path.empty()) return default_curriculum();
  try {
    return curriculum_from_json(nlohmann::json::parse(dfvpo::detail::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, path + ": " + e.what());
  }
}

inline int cmd_pairs(const PairsSettings& s) {
  require(!s.manifest.empty(), Errc::InvalidConfig, "pairs: --manifest is required");
  const fs::path out(s.out);
  detail::ensure_dir(out / "videos");
  detail::write_snapshot(s, pairs_fields(), out / kSnapshotName);

  const fs::path manifest(s.manifest);
  const DatasetManifest m = read_manifest(manifest);
  CurriculumSchedule cur = load_curriculum(s.curriculum);
  if (!s.mode.empty()) cur.mode = parse_mode(s.mode);
  require(s.stage < cur.stages.size(), Errc::ConfigOutOfBounds, "stage beyond the curriculum");

  const std::size_t n = m.entries.size();
  std::vector<std::vector<PairRecord>> made(n);
  std::vector<std::vector<std::string>> skipped(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& e = m.entries[i];
    try {
      const fs::path src = manifest.parent_path() / e.video_path;
      const Video stored = load_video(src).with_id(e.id);
      const Video win = to_float(stored);
      const std::string win_rel = "videos/" + e.id + "-win.vraw";
      bool wrote_win = false;
      for (std::uint64_t k = 0; k < s.specs_per_video; ++k) {
        const DistortionSpec spec =
            draw_spec(cur.stages[s.stage], cur.mode, win.shape(), rng::derive(rng::derive(s.seed, i), k));
        PreferencePair p;
        try {
          p = make_pair(win, e.condition_label, spec, {e.id, static_cast<std::size_t>(s.stage), 0});
        } catch (const Error& err) {
          if (err.code() != Errc::LoseEqualsWin) throw;
          skipped[i].push_back(nlohmann::json{{"warning", "LoseEqualsWin"}, {"video_id", e.id}, {"draw", k}}.dump());
          continue;
        }
        if (!wrote_win) {
          save_video(stored, out / win_rel);
          wrote_win = true;
        }
        const std::string lose_rel = "videos/" + e.id + "-" + std::to_string(k) + "-lose.vraw";
        save_video(p.lose, out / lose_rel);
        made[i].push_back({win_rel, lose_rel, p.condition, p.spec, p.provenance});
      }
    } catch (const Error& err) {
      throw Error(err.code(), "video '" + e.id + "': " + err.what());
    }
  });

  std::vector<PairRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& w : skipped[i]) std::cerr << w << "\n";
    for (auto& r : made[i]) records.push_back(std::move(r));
  }
  write_pair_manifest(records, out / "pairs.jsonl");
  detail::log(static_cast<int>(s.verbosity), 1, "pairs: wrote " + std::to_string(records.size()) + " pairs to " + s.out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// train

struct TrainSettings {
  std::string pairs;
  std::string out = "run";
  std::string held_out;  // optional pair manifest for the periodic margin column
  TrainConfig train;
  std::vector<double> curriculum_noise_sigma;
  std::vector<double> curriculum_blur_sigma;
  std::vector<double> curriculum_max_color_shift;
  std::vector<double> curriculum_shuffle_fraction;
  std::uint64_t curriculum_update_interval = 0;
  std::string curriculum_mode;
  std::int64_t verbosity = 1;

  TrainSettings() { set_curriculum(default_curriculum()); }

  void set_curriculum(const CurriculumSchedule& c) {
    curriculum_noise_sigma.clear();
    curriculum_blur_sigma.clear();
    curriculum_max_color_shift.clear();
    curriculum_shuffle_fraction.clear();
    for (const auto& st : c.stages) {
      curriculum_noise_sigma.push_back(st.noise_sigma);
      curriculum_blur_sigma.push_back(st.blur_sigma);
      curriculum_max_color_shift.push_back(st.max_color_shift);
      curriculum_shuffle_fraction.push_back(st.shuffle_fraction);
    }
    curriculum_update_interval = c.update_interval;
    curriculum_mode = to_string(c.mode);
  }

  CurriculumSchedule curriculum() const {
    const std::size_t n = curriculum_noise_sigma.size();
    require(curriculum_blur_sigma.size() == n && curriculum_max_color_shift.size() == n &&
                curriculum_shuffle_fraction.size() == n,
            Errc::InvalidConfig, "curriculum arrays must have equal lengths");
    CurriculumSchedule c;
    for (std::size_t i = 0; i < n; ++i)
      c.stages.push_back({curriculum_noise_sigma[i], curriculum_blur_sigma[i], curriculum_max_color_shift[i],
                          curriculum_shuffle_fraction[i]});
    c.update_interval = curriculum_update_interval;
    c.mode = parse_mode(curriculum_mode);
    validate(c);
    return c;
  }

  /// The training configuration with the curriculum filled in.
  TrainConfig resolved() const {
    TrainConfig c = train;
    c.curriculum = curriculum();
    return c;
  }
};

inline const config::FieldSet<TrainSettings>& train_fields() {
  using S = TrainSettings;
  using config::field;
  using config::ref_field;
#define DFVPO_TRAIN_FIELD(name, help) ref_field<S>(#name, [](auto& s) -> auto& { return s.train.name; }, help)
  static const config::FieldSet<S> f{
      field("pairs", &S::pairs, "training pair manifest"),
      field("out", &S::out, "output directory"),
      field("held_out", &S::held_out, "optional held-out pair manifest for margin_eval"),
      DFVPO_TRAIN_FIELD(beta_dpo, "preference temperature"),
      DFVPO_TRAIN_FIELD(lambda_sft, "weight of the denoising anchor"),
      DFVPO_TRAIN_FIELD(learning_rate, "optimizer step size"),
      DFVPO_TRAIN_FIELD(batch_size, "pairs per step"),
      DFVPO_TRAIN_FIELD(grad_accum_steps, "steps accumulated per update"),
      DFVPO_TRAIN_FIELD(total_steps, "optimizer updates"),
      DFVPO_TRAIN_FIELD(seed, "training seed"),
      config::string_field<S>(
          "dpo_form", [](const S& s) { return to_string(s.train.dpo_form); },
          [](S& s, const std::string& v) { s.train.dpo_form = parse_dpo_form(v); }, "sigmoid, difference or none"),
      config::string_field<S>(
          "optimizer", [](const S& s) { return to_string(s.train.optimizer); },
          [](S& s, const std::string& v) { s.train.optimizer = parse_optimizer(v); }, "sgd or adamw"),
      DFVPO_TRAIN_FIELD(weight_decay, "decoupled weight decay"),
      DFVPO_TRAIN_FIELD(adam_beta1, "first-moment decay"),
      DFVPO_TRAIN_FIELD(adam_beta2, "second-moment decay"),
      DFVPO_TRAIN_FIELD(adam_eps, "denominator epsilon"),
      DFVPO_TRAIN_FIELD(diffusion_steps, "noise levels"),
      DFVPO_TRAIN_FIELD(beta_start, "first noise variance"),
      DFVPO_TRAIN_FIELD(beta_end, "last noise variance"),
      DFVPO_TRAIN_FIELD(num_conditions, "condition vocabulary size"),
      DFVPO_TRAIN_FIELD(hidden1, "first hidden width"),
      DFVPO_TRAIN_FIELD(hidden2, "second hidden width"),
      DFVPO_TRAIN_FIELD(time_embed_dim, "timestep embedding width"),
      DFVPO_TRAIN_FIELD(cond_embed_dim, "condition embedding width"),
      DFVPO_TRAIN_FIELD(pretrain_steps, "denoising-only warm-up updates for the reference"),
      DFVPO_TRAIN_FIELD(pretrain_learning_rate, "warm-up step size"),
      DFVPO_TRAIN_FIELD(eval_every, "updates between held-out margin evaluations; 0 disables"),
      DFVPO_TRAIN_FIELD(eval_draws, "noise draws per held-out margin"),
      field("curriculum_noise_sigma", &S::curriculum_noise_sigma, "per-stage noise std"),
      field("curriculum_blur_sigma", &S::curriculum_blur_sigma, "per-stage blur sigma"),
      field("curriculum_max_color_shift", &S::curriculum_max_color_shift, "per-stage color shift bound"),
      field("curriculum_shuffle_fraction", &S::curriculum_shuffle_fraction, "per-stage shuffle block fraction"),
      field("curriculum_update_interval", &S::curriculum_update_interval, "updates per curriculum stage"),
      field("curriculum_mode", &S::curriculum_mode, "temporal, spatial, hybrid or mixed"),
      field("verbosity", &S::verbosity, "0 quiet, 1 progress, 2 detail"),
  };
#undef DFVPO_TRAIN_FIELD
  return f;
}

inline nlohmann::json spec_log_json(const SpecLogEntry& e) {
  return {{"step", e.step}, {"stage", e.stage}, {"pair_index", e.pair_index}, {"spec", to_json(e.spec)}};
}

inline std::string loss_curve_svg(const std::vector<MetricsRow>& rows) {
  plot::Series total{"total", "#1f77b4", {}, {}}, dpo{"dpo", "#d62728", {}, {}}, sft{"sft", "#2ca02c", {}, {}};
  for (const auto& r : rows) {
    const auto x = static_cast<double>(r.step);
    total.x.push_back(x);
    total.y.push_back(r.total_loss);
    dpo.x.push_back(x);
    dpo.y.push_back(r.dpo_loss);
    sft.x.push_back(x);
    sft.y.push_back(r.sft_loss);
  }
  return plot::line_chart({total, dpo, sft}, "training loss", "step", true);
}

inline int cmd_train(const TrainSettings& s) {
  require(!s.pairs.empty(), Errc::InvalidConfig, "train: --pairs is required");
  const TrainConfig cfg = s.resolved();
  validate(cfg);
  const fs::path out(s.out);
  detail::ensure_dir(out);
  detail::write_snapshot(s, train_fields(), out / kSnapshotName);
  const int verbosity = static_cast<int>(s.verbosity);

  std::vector<PreferencePair> pairs = load_pairs(s.pairs);
  require(!pairs.empty(), Errc::InvalidConfig, "train: no pairs in " + s.pairs);
  const Shape shape = pairs.front().win.shape();
  for (const auto& p : pairs)
    require(p.win.shape() == shape, Errc::ShapeMismatch, "train: pairs have different video shapes");
  std::vector<PreferencePair> held;
  if (!s.held_out.empty()) held = load_pairs(s.held_out);

  TrainState state = initial_state(cfg, shape, pairs);
  detail::log(verbosity, 1, "train: " + std::to_string(pairs.size()) + " pairs, " + std::to_string(state.params.size()) +
                                " parameters");

  std::ofstream metrics(out / "metrics.csv", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(metrics), Errc::IoError, "cannot write metrics.csv");
  metrics << metrics_csv_header();
  RunHooks hooks;
  hooks.stop = &stop_flag();
  hooks.eval_pairs = held;
  hooks.on_metrics = [&](const MetricsRow& r) {
    metrics << metrics_csv_row(r);
    if (r.step % 100 == 0) {
      metrics.flush();
      detail::log(verbosity, 2,
                  "step " + std::to_string(r.step) + " stage " + std::to_string(r.stage) + " total " +
                      std::to_string(r.total_loss));
    }
  };
  RunResult result = run_dfvpo(std::move(pairs), cfg, std::move(state), hooks);
  metrics.flush();

  save_checkpoint(out / "checkpoint.dfpm", {&result.state.params, &result.state.ref_params});
  dfvpo::detail::write_file(out / "loss_curve.svg", loss_curve_svg(result.metrics));
  std::string log;
  for (const auto& e : result.spec_log) log += spec_log_json(e).dump() + "\n";
  dfvpo::detail::write_file(out / "specs.jsonl", log);

  if (result.interrupted) {
    std::cerr << error_json("Interrupted", "stopped at step " + std::to_string(result.state.step), kAssertionFailed)
              << "\n";
    return kAssertionFailed;
  }
  detail::log(verbosity, 1, "train: " + std::to_string(result.state.step) + " steps, checkpoint in " + s.out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// eval

struct EvalSettings {
  std::string ckpt;
  std::string pairs;
  std::string out = "eval";
  double beta_dpo = 5000.0;
  std::uint64_t num_draws = 32;
  std::uint64_t seed = 0;
  std::uint64_t diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  std::uint64_t num_samples = 2;
  std::int64_t verbosity = 1;
};

inline const config::FieldSet<EvalSettings>& eval_fields() {
  using S = EvalSettings;
  static const config::FieldSet<S> f{
      config::field("ckpt", &S::ckpt, "checkpoint (trained and reference parameters)"),
      config::field("pairs", &S::pairs, "held-out pair manifest"),
      config::field("out", &S::out, "output directory"),
      config::field("beta_dpo", &S::beta_dpo, "preference temperature used in the margin"),
      config::field("num_draws", &S::num_draws, "noise draws per pair"),
      config::field("seed", &S::seed, "evaluation seed"),
      config::field("diffusion_steps", &S::diffusion_steps, "noise levels (must match training)"),
      config::field("beta_start", &S::beta_start, "first noise variance (must match training)"),
      config::field("beta_end", &S::beta_end, "last noise variance (must match training)"),
      config::field("num_samples", &S::num_samples, "ancestral samples rendered as frame strips"),
      config::field("verbosity", &S::verbosity, "0 quiet, 1 progress, 2 detail"),
  };
  return f;
}

struct MarginStats {
  std::vector<double> margins;
  double mean = 0.0;
  double standard_error = 0.0;
  double median = 0.0;
  double sign_test_p = 1.0;
  double positive_fraction = 0.0;
};

inline MarginStats margin_stats(std::vector<double> margins) {
  MarginStats m;
  m.mean = stats::mean(margins);
  m.standard_error = stats::standard_error(margins);
  m.median = stats::median(margins);
  m.sign_test_p = stats::sign_test_greater(margins);
  std::size_t pos = 0;
  for (double x : margins) pos += x > 0.0;
  m.positive_fraction = margins.empty() ? 0.0 : static_cast<double>(pos) / static_cast<double>(margins.size());
  m.margins = std::move(margins);
  return m;
}

/// Per-pair implicit reward margins, computed in parallel.
inline std::vector<double> pair_margins(const TrainState& state, const std::vector<PreferencePair>& pairs,
                                        const NoiseSchedule& sched, std::size_t draws, double beta, std::uint64_t seed) {
  std::vector<double> out(pairs.size());
  parallel_for(pairs.size(),
               [&](std::size_t i) { out[i] = implicit_reward_margin(state, pairs[i], sched, draws, beta, seed); });
  return out;
}

inline double parallel_win_fraction(const DenoiserParams& p, const std::vector<PreferencePair>& pairs,
                                    const NoiseSchedule& sched, std::size_t draws, std::uint64_t seed) {
  std::vector<int> lower(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto [ew, el] = matched_errors(p, pairs[i], sched, draws, seed);
    lower[i] = ew < el;
  });
  std::size_t n = 0;
  for (int x : lower) n += static_cast<std::size_t>(x);
  return pairs.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(pairs.size());
}

inline int cmd_eval(const EvalSettings& s) {
  require(!s.ckpt.empty() && !s.pairs.empty(), Errc::InvalidConfig, "eval: --ckpt and --pairs are required");
  const fs::path out(s.out);
  detail::ensure_dir(out / "samples");
  detail::write_snapshot(s, eval_fields(), out / kSnapshotName);

  auto sets = load_checkpoint(s.ckpt);
  require(!sets.empty(), Errc::IoError, "eval: checkpoint holds no parameters");
  TrainState state = make_state(sets.size() > 1 ? sets[1] : sets[0]);
  state.params = sets[0];
  const std::vector<PreferencePair> pairs = load_pairs(s.pairs);
  const NoiseSchedule sched = build_schedule(s.diffusion_steps, s.beta_start, s.beta_end);

  const MarginStats m = margin_stats(pair_margins(state, pairs, sched, s.num_draws, s.beta_dpo, s.seed));
  const double trained = parallel_win_fraction(state.params, pairs, sched, s.num_draws, s.seed);
  const double reference = parallel_win_fraction(state.ref_params, pairs, sched, s.num_draws, s.seed);

  std::vector<std::string> sample_files(s.num_samples);
  const auto& mc = state.params.config;
  parallel_for(s.num_samples, [&](std::size_t k) {
    const int cond = static_cast<int>(k % mc.num_conditions);
    rng::Stream r(rng::derive(s.seed, k), 0x5A3);
    const Video v = tensor_to_video(ancestral_sample(state.params, cond, sched, r));
    const std::string name = "samples/sample_" + std::to_string(k) + "_c" + std::to_string(cond) + ".pgm";
    Raster strip = frame_strip(to_u8(v));
    dfvpo::detail::write_file(out / name, encode_pnm(strip));
    sample_files[k] = name;
  });

  const nlohmann::json report{
      {"num_pairs", pairs.size()},
      {"num_draws", s.num_draws},
      {"beta_dpo", s.beta_dpo},
      {"margin",
       {{"mean", m.mean},
        {"standard_error", m.standard_error},
        {"median", m.median},
        {"sign_test_p", m.sign_test_p},
        {"positive_fraction", m.positive_fraction}}},
      {"win_lower_fraction", {{"trained", trained}, {"reference", reference}}},
      {"margins", m.margins},
      {"samples", sample_files},
  };
  detail::write_json(out / "eval.json", report);
  detail::log(static_cast<int>(s.verbosity), 1,
              "eval: mean margin " + std::to_string(m.mean) + " over " + std::to_string(pairs.size()) + " pairs");
  return kSuccess;
}

// ---------------------------------------------------------------------------
// theory

struct TheorySettings {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string report = "theory_report.json";
  std::int64_t verbosity = 1;
};

inline const config::FieldSet<TheorySettings>& theory_fields() {
  using S = TheorySettings;
  static const config::FieldSet<S> f{
      config::field("suite", &S::suite, "improvement, bt, optimal, offset or all"),
      config::field("seed", &S::seed, "seed for the random MDPs and policies"),
      config::field("report", &S::report, "output JSON report"),
      config::field("verbosity", &S::verbosity, "0 quiet, 1 progress, 2 detail"),
  };
  return f;
}

/// Snapshot path next to the report: <stem>.resolved_config.toml.
inline fs::path theory_snapshot_path(const fs::path& report) {
  return report.parent_path() / (report.stem().string() + "." + kSnapshotName);
}

inline int cmd_theory(const TheorySettings& s) {
  const fs::path report(s.report);
  if (!report.parent_path().empty()) detail::ensure_dir(report.parent_path());
  detail::write_snapshot(s, theory_fields(), theory_snapshot_path(report));

  std::vector<std::string> suites{s.suite};
  if (s.suite == "all") suites = {"improvement", "bt", "optimal", "offset"};
  std::vector<theory::SuiteReport> parts(suites.size());
  parallel_for(suites.size(), [&](std::size_t i) { parts[i] = theory::run_suite(suites[i], s.seed); });
  theory::SuiteReport rep;
  for (auto& p : parts)
    for (auto& c : p.checks) rep.checks.push_back(std::move(c));

  nlohmann::json j = rep.to_json();
  j["suite"] = s.suite;
  j["seed"] = s.seed;
  detail::write_json(report, j);
  for (const auto& c : rep.checks) {
    std::string line = (c.asserted ? (c.passed ? "PASS " : "FAIL ") : "DIAG ") + c.name;
    if (c.max_abs_error) {
      char buf[32];
      std::snprintf(buf, sizeof buf, " max_abs_error=%.3g", *c.max_abs_error);
      line += buf;
    }
    detail::log(static_cast<int>(s.verbosity), 1, line);
  }
  return rep.passed() ? kSuccess : kAssertionFailed;
}

}  // namespace dfvpo::cmd
