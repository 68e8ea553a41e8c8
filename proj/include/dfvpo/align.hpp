#pragma once

// Preference fine-tuning: the sigmoid preference loss against a frozen
// reference, the denoising anchor on the win video, optimizers, the training
// step with gradient accumulation, the curriculum-driven training loop and
// the implicit reward margin used for evaluation.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfvpo/diffuse.hpp"
#include "dfvpo/distort.hpp"
#include "dfvpo/error.hpp"
#include "dfvpo/rng.hpp"

namespace dfvpo {

enum class DpoForm { Sigmoid, Difference, None };
enum class OptimizerKind { Sgd, AdamW };

struct TrainConfig {
  double beta_dpo = 5000.0;
  double lambda_sft = 1.0;
  double learning_rate = 1e-3;
  CurriculumSchedule curriculum = default_curriculum();
  std::size_t batch_size = 1;
  std::size_t grad_accum_steps = 1;
  std::uint64_t total_steps = 2000;
  std::uint64_t seed = 0;

  DpoForm dpo_form = DpoForm::Sigmoid;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Denoiser and schedule. The video shape comes from the data.
  std::size_t diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  std::size_t num_conditions = 8;
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 32;
  std::size_t time_embed_dim = 8;
  std::size_t cond_embed_dim = 4;

  // Denoising-only warm-up that produces the reference ("pre-trained") model.
  std::uint64_t pretrain_steps = 0;
  double pretrain_learning_rate = 1e-3;

  std::uint64_t eval_every = 0;  // 0 disables the periodic margin column
  std::size_t eval_draws = 8;
};

inline std::string to_string(DpoForm f) {
  switch (f) {
    case DpoForm::Sigmoid: return "sigmoid";
    case DpoForm::Difference: return "difference";
    case DpoForm::None: return "none";
  }
  return "sigmoid";
}

inline DpoForm parse_dpo_form(const std::string& s) {
  if (s == "sigmoid") return DpoForm::Sigmoid;
  if (s == "difference") return DpoForm::Difference;
  if (s == "none") return DpoForm::None;
  fail(Errc::InvalidConfig, "unknown dpo_form '" + s + "' (sigmoid, difference, none)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adamw") return OptimizerKind::AdamW;
  fail(Errc::InvalidConfig, "unknown optimizer '" + s + "' (sgd, adamw)");
}

inline void validate(const TrainConfig& c) {
  require(c.beta_dpo > 0.0, Errc::InvalidConfig, "beta_dpo must be positive");
  require(c.lambda_sft >= 0.0, Errc::InvalidConfig, "lambda_sft must be >= 0");
  require(c.learning_rate >= 0.0 && std::isfinite(c.learning_rate), Errc::InvalidConfig,
          "learning_rate must be finite and >= 0");
  require(c.batch_size >= 1 && c.grad_accum_steps >= 1, Errc::InvalidConfig, "batch_size and grad_accum_steps >= 1");
  require(c.diffusion_steps >= 1, Errc::InvalidConfig, "diffusion_steps must be >= 1");
  require(c.eval_draws >= 1, Errc::InvalidConfig, "eval_draws must be >= 1");
  validate(c.curriculum);
}

inline DenoiserConfig model_config(const TrainConfig& c, const Shape& video) {
  DenoiserConfig m;
  m.video = video;
  m.time_embed_dim = c.time_embed_dim;
  m.cond_embed_dim = c.cond_embed_dim;
  m.num_conditions = c.num_conditions;
  m.hidden1 = c.hidden1;
  m.hidden2 = c.hidden2;
  return m;
}

inline NoiseSchedule schedule_for(const TrainConfig& c) {
  return build_schedule(c.diffusion_steps, c.beta_start, c.beta_end);
}

// ---------------------------------------------------------------------------
// State

struct LossParts {
  double total = 0.0;
  double dpo = 0.0;
  double sft = 0.0;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t updates = 0;
};

struct TrainState {
  DenoiserParams params;
  DenoiserParams ref_params;  // frozen after construction
  std::uint64_t step = 0;     // optimizer updates applied
  std::uint64_t calls = 0;    // train_step invocations; keys the per-call RNG
  std::vector<double> grad_accum;
  std::size_t accum_count = 0;
  LossParts accum_loss;
  OptimizerState opt;
  std::vector<LossParts> history;  // one entry per optimizer update
};

inline TrainState make_state(DenoiserParams params) {
  TrainState s;
  s.ref_params = params;
  s.params = std::move(params);
  return s;
}

// ---------------------------------------------------------------------------
// Objective

/// The four denoising errors entering the preference loss.
struct PreferenceErrors {
  double theta_win = 0.0;
  double ref_win = 0.0;
  double theta_lose = 0.0;
  double ref_lose = 0.0;

  /// -(beta / 2) [(theta_w - ref_w) - (theta_l - ref_l)]
  double inner(double beta) const { return -0.5 * beta * ((theta_win - ref_win) - (theta_lose - ref_lose)); }
};

/// -log sigmoid(z), evaluated without overflow.
inline double neg_log_sigmoid(double z) { return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

inline double dpo_loss_from_errors(const PreferenceErrors& e, double beta) { return neg_log_sigmoid(e.inner(beta)); }

namespace detail {

inline void check_pair(const DenoiserParams& p, const PreferencePair& pair) {
  require(pair.win.shape() == p.config.video && pair.lose.shape() == p.config.video, Errc::ShapeMismatch,
          "pair videos do not match the model's video shape");
}

struct PairEval {
  DenoisingEval theta_win, theta_lose;
  PreferenceErrors errors;
};

inline PairEval evaluate_pair(const TrainState& s, const PreferencePair& pair, std::size_t t, const Tensor& eps,
                              const NoiseSchedule& sched, bool need_lose, bool want_grad) {
  check_pair(s.params, pair);
  PairEval out;
  const Tensor w = Tensor::from_video(pair.win);
  out.theta_win = evaluate_denoising(s.params, w, pair.condition, t, eps, sched, want_grad);
  out.errors.theta_win = out.theta_win.error;
  if (need_lose) {
    const Tensor l = Tensor::from_video(pair.lose);
    out.theta_lose = evaluate_denoising(s.params, l, pair.condition, t, eps, sched, want_grad);
    out.errors.theta_lose = out.theta_lose.error;
    out.errors.ref_win = evaluate_denoising(s.ref_params, w, pair.condition, t, eps, sched, false).error;
    out.errors.ref_lose = evaluate_denoising(s.ref_params, l, pair.condition, t, eps, sched, false).error;
  }
  return out;
}

}  // namespace detail

/// Preference loss with shared (t, eps) across the win and lose branches.
inline double dpo_loss(const TrainState& s, const PreferencePair& pair, std::size_t t, const Tensor& eps,
                       const NoiseSchedule& sched, double beta_dpo) {
  return dpo_loss_from_errors(detail::evaluate_pair(s, pair, t, eps, sched, true, false).errors, beta_dpo);
}

inline LossParts combine(double dpo, double sft, double lambda) { return {dpo + lambda * sft, dpo, sft}; }

namespace detail {

inline double dpo_part(const PreferenceErrors& e, const TrainConfig& c) {
  switch (c.dpo_form) {
    case DpoForm::Sigmoid: return dpo_loss_from_errors(e, c.beta_dpo);
    case DpoForm::Difference: return e.theta_win - e.theta_lose;
    case DpoForm::None: return 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// total = dpo + lambda * sft, where sft is the denoising error on the win video.
inline LossParts total_loss(const TrainState& s, const PreferencePair& pair, std::size_t t, const Tensor& eps,
                            const NoiseSchedule& sched, const TrainConfig& c) {
  const bool need_lose = c.dpo_form != DpoForm::None;
  const auto ev = detail::evaluate_pair(s, pair, t, eps, sched, need_lose, false);
  return combine(detail::dpo_part(ev.errors, c), ev.errors.theta_win, c.lambda_sft);
}

/// Loss parts plus the exact gradient of `total` with respect to the trained
/// parameters; the gradient is accumulated into `grad` scaled by `weight`.
inline LossParts total_loss_grad(const TrainState& s, const PreferencePair& pair, std::size_t t, const Tensor& eps,
                                 const NoiseSchedule& sched, const TrainConfig& c, std::span<double> grad,
                                 double weight = 1.0) {
  const bool need_lose = c.dpo_form != DpoForm::None;
  auto ev = detail::evaluate_pair(s, pair, t, eps, sched, need_lose, true);

  double coef_win = c.lambda_sft;
  double coef_lose = 0.0;
  if (c.dpo_form == DpoForm::Sigmoid) {
    // d/dz [-log sigmoid(z)] = -sigmoid(-z); dz/de_w = -beta/2, dz/de_l = +beta/2
    const double s_neg = detail::sigmoid(-ev.errors.inner(c.beta_dpo));
    coef_win += 0.5 * c.beta_dpo * s_neg;
    coef_lose -= 0.5 * c.beta_dpo * s_neg;
  } else if (c.dpo_form == DpoForm::Difference) {
    coef_win += 1.0;
    coef_lose -= 1.0;
  }

  auto backprop = [&](DenoisingEval& e, double coef) {
    if (coef == 0.0) return;
    for (double& d : e.d_error) d *= coef * weight;
    denoiser_backward(s.params, e.cache, e.d_error, grad);
  };
  backprop(ev.theta_win, coef_win);
  if (need_lose) backprop(ev.theta_lose, coef_lose);
  return combine(detail::dpo_part(ev.errors, c), ev.errors.theta_win, c.lambda_sft);
}

// ---------------------------------------------------------------------------
// Optimizers

inline void apply_update(std::vector<double>& params, std::span<const double> grad, OptimizerState& o,
                         const TrainConfig& c, double lr) {
  if (c.optimizer == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    ++o.updates;
    return;
  }
  // Adam with decoupled weight decay.
  if (o.m.size() != params.size()) {
    o.m.assign(params.size(), 0.0);
    o.v.assign(params.size(), 0.0);
  }
  ++o.updates;
  const double b1 = c.adam_beta1, b2 = c.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(o.updates));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(o.updates));
  const auto n = static_cast<Eigen::Index>(params.size());
  Eigen::Map<Eigen::ArrayXd> p(params.data(), n), m(o.m.data(), n), v(o.v.data(), n);
  Eigen::Map<const Eigen::ArrayXd> g(grad.data(), n);
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g.square();
  p -= lr * ((m / bc1) / ((v / bc2).sqrt() + c.adam_eps) + c.weight_decay * p);
}

// ---------------------------------------------------------------------------
// Training step

/// (t, eps) for the k-th sample of train_step call `call`.
inline std::pair<std::size_t, Tensor> draw_noise(std::uint64_t seed, std::uint64_t call, std::size_t k,
                                                 const NoiseSchedule& sched, const Shape& video) {
  rng::Stream r(rng::derive(rng::derive(seed, call), k), 0x7E57);
  const std::size_t t = 1 + r.index(sched.num_steps);
  return {t, Tensor::gaussian({video.frames, video.height, video.width, video.channels}, r)};
}

struct StepResult {
  LossParts loss;        // mean over the batch of this call
  bool updated = false;  // an optimizer update was applied
  double grad_norm = 0.0;
};

/// Accumulates the batch gradient; every grad_accum_steps calls the averaged
/// gradient is applied and `step` advances by one.
inline StepResult train_step(TrainState& s, std::span<const PreferencePair> batch, const TrainConfig& c,
                             const NoiseSchedule& sched) {
  require(!batch.empty(), Errc::InvalidConfig, "empty batch");
  if (s.grad_accum.size() != s.params.size()) s.grad_accum.assign(s.params.size(), 0.0);

  StepResult out;
  const double w = 1.0 / static_cast<double>(batch.size() * c.grad_accum_steps);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto [t, eps] = draw_noise(c.seed, s.calls, k, sched, s.params.config.video);
    const LossParts lp = total_loss_grad(s, batch[k], t, eps, sched, c, s.grad_accum, w);
    const double bw = 1.0 / static_cast<double>(batch.size());
    out.loss.total += bw * lp.total;
    out.loss.dpo += bw * lp.dpo;
    out.loss.sft += bw * lp.sft;
  }
  ++s.calls;
  ++s.accum_count;
  const double aw = 1.0 / static_cast<double>(c.grad_accum_steps);
  s.accum_loss.total += aw * out.loss.total;
  s.accum_loss.dpo += aw * out.loss.dpo;
  s.accum_loss.sft += aw * out.loss.sft;

  if (s.accum_count < c.grad_accum_steps) return out;

  double sq = 0.0;
  for (double g : s.grad_accum) sq += g * g;
  if (!std::isfinite(sq)) fail(Errc::NonFiniteGradient, "non-finite gradient at step " + std::to_string(s.step));
  out.grad_norm = std::sqrt(sq);
  apply_update(s.params.values, s.grad_accum, s.opt, c, c.learning_rate);
  std::fill(s.grad_accum.begin(), s.grad_accum.end(), 0.0);
  s.history.push_back(s.accum_loss);
  out.loss = s.accum_loss;
  s.accum_loss = {};
  s.accum_count = 0;
  ++s.step;
  out.updated = true;
  return out;
}

inline StepResult train_step(TrainState& s, const PreferencePair& pair, const TrainConfig& c,
                             const NoiseSchedule& sched) {
  return train_step(s, std::span<const PreferencePair>(&pair, 1), c, sched);
}

// ---------------------------------------------------------------------------
// Evaluation

/// Mean over n_draws of (t, eps) of -(beta/2)[(e_theta^W - e_ref^W) - (e_theta^L - e_ref^L)].
inline double implicit_reward_margin(const TrainState& s, const PreferencePair& pair, const NoiseSchedule& sched,
                                     std::size_t n_draws, double beta_dpo, std::uint64_t seed) {
  require(n_draws >= 1, Errc::InvalidConfig, "n_draws must be >= 1");
  double acc = 0.0;
  for (std::size_t d = 0; d < n_draws; ++d) {
    auto [t, eps] = draw_noise(seed, d, 0, sched, s.params.config.video);
    acc += detail::evaluate_pair(s, pair, t, eps, sched, true, false).errors.inner(beta_dpo);
  }
  return acc / static_cast<double>(n_draws);
}

/// Mean denoising error of `params` on the win and lose video over the same
/// n_draws of (t, eps) as implicit_reward_margin.
inline std::pair<double, double> matched_errors(const DenoiserParams& p, const PreferencePair& pair,
                                                const NoiseSchedule& sched, std::size_t n_draws, std::uint64_t seed) {
  detail::check_pair(p, pair);
  const Tensor w = Tensor::from_video(pair.win);
  const Tensor l = Tensor::from_video(pair.lose);
  double ew = 0.0, el = 0.0;
  for (std::size_t d = 0; d < n_draws; ++d) {
    auto [t, eps] = draw_noise(seed, d, 0, sched, p.config.video);
    ew += evaluate_denoising(p, w, pair.condition, t, eps, sched, false).error;
    el += evaluate_denoising(p, l, pair.condition, t, eps, sched, false).error;
  }
  return {ew / static_cast<double>(n_draws), el / static_cast<double>(n_draws)};
}

/// Fraction of pairs whose matched win error is strictly below the lose error.
inline double win_preference_fraction(const DenoiserParams& p, std::span<const PreferencePair> pairs,
                                      const NoiseSchedule& sched, std::size_t n_draws, std::uint64_t seed) {
  if (pairs.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& pair : pairs) {
    const auto [ew, el] = matched_errors(p, pair, sched, n_draws, seed);
    if (ew < el) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Reference warm-up

/// Denoising-only training on the win videos; returns the trained parameters.
inline DenoiserParams pretrain_denoiser(DenoiserParams params, std::span<const PreferencePair> data,
                                        const TrainConfig& c, const NoiseSchedule& sched) {
  if (c.pretrain_steps == 0 || data.empty()) return params;
  TrainConfig pc = c;
  pc.dpo_form = DpoForm::None;
  pc.lambda_sft = 1.0;
  pc.learning_rate = c.pretrain_learning_rate;
  pc.grad_accum_steps = 1;
  pc.seed = rng::derive(c.seed, 0xB007);
  TrainState s = make_state(std::move(params));
  rng::Stream order(pc.seed, 0x0D3);
  std::vector<std::size_t> perm;
  std::size_t cursor = 0;
  std::vector<PreferencePair> batch;
  while (s.step < c.pretrain_steps) {
    batch.clear();
    for (std::size_t k = 0; k < pc.batch_size; ++k) {
      if (cursor == perm.size()) {
        perm = rng::permutation(data.size(), order);
        cursor = 0;
      }
      batch.push_back(data[perm[cursor++]]);
    }
    train_step(s, batch, pc, sched);
  }
  return std::move(s.params);
}

/// Random initialization followed by the optional warm-up; the result is both
/// the starting point and the frozen reference.
inline TrainState initial_state(const TrainConfig& c, const Shape& video, std::span<const PreferencePair> data) {
  validate(c);
  DenoiserParams p = init_params(model_config(c, video), rng::derive(c.seed, 0x1417));
  p = pretrain_denoiser(std::move(p), data, c, schedule_for(c));
  return make_state(std::move(p));
}

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRow {
  std::uint64_t step = 0;
  std::size_t stage = 0;
  double dpo_loss = 0.0;
  double sft_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> margin_eval;
};

struct SpecLogEntry {
  std::uint64_t step = 0;
  std::size_t stage = 0;
  std::size_t pair_index = 0;
  DistortionSpec spec;
};

struct RunResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
  std::vector<SpecLogEntry> spec_log;
  bool interrupted = false;
};

struct RunHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  const std::atomic<bool>* stop = nullptr;
  std::span<const PreferencePair> eval_pairs;
};

/// Lose case for `win` at curriculum `stage`; redraws the seed until the
/// distortion changes the video.
inline std::pair<Video, DistortionSpec> regenerate_lose(const Video& win, const CurriculumSchedule& cur,
                                                        std::size_t stage, std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const DistortionSpec spec = draw_spec(cur.stages[stage], cur.mode, win.shape(), rng::derive(seed, attempt));
    Video lose = distort(win, spec);
    if (!lose.same_samples(win)) return {lose.with_id(win.id() + "-lose"), spec};
  }
  fail(Errc::LoseEqualsWin, "could not draw a non-degenerate distortion for '" + win.id() + "'");
}

/// Training loop: pairs are visited cyclically in manifest order; whenever the
/// active curriculum stage differs from the stage a pair's lose case was made
/// with, the lose case is re-derived from the win video at the new severity.
inline RunResult run_dfvpo(std::vector<PreferencePair> pairs, const TrainConfig& c, TrainState state,
                           const RunHooks& hooks = {}) {
  validate(c);
  require(!pairs.empty() || c.total_steps == 0, Errc::InvalidConfig, "no training pairs");
  const NoiseSchedule sched = schedule_for(c);
  RunResult out;
  std::vector<std::size_t> pair_stage(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) pair_stage[i] = pairs[i].provenance.curriculum_stage;

  std::size_t cursor = 0;
  std::vector<PreferencePair> batch;
  std::vector<std::size_t> batch_idx;
  std::size_t stage = 0;

  while (state.step < c.total_steps) {
    if (hooks.stop && hooks.stop->load()) {
      out.interrupted = true;
      break;
    }
    stage = curriculum_update(c.curriculum, state.step);
    batch.clear();
    batch_idx.clear();
    for (std::size_t k = 0; k < c.batch_size; ++k) {
      const std::size_t i = cursor;
      cursor = (cursor + 1) % pairs.size();
      if (pair_stage[i] != stage) {
        auto [lose, spec] = regenerate_lose(pairs[i].win, c.curriculum, stage,
                                            rng::derive(rng::derive(c.seed, 0x5EED + i), stage));
        pairs[i].lose = std::move(lose);
        pairs[i].spec = spec;
        pairs[i].provenance.curriculum_stage = stage;
        pairs[i].provenance.creation_step = state.step;
        pair_stage[i] = stage;
      }
      batch.push_back(pairs[i]);
      batch_idx.push_back(i);
      out.spec_log.push_back({state.step, stage, i, pairs[i].spec});
    }
    const std::uint64_t step_before = state.step;
    const StepResult r = train_step(state, batch, c, sched);
    if (!r.updated) continue;

    MetricsRow row{step_before, stage, r.loss.dpo, r.loss.sft, r.loss.total, r.grad_norm, std::nullopt};
    if (c.eval_every > 0 && !hooks.eval_pairs.empty() && state.step % c.eval_every == 0) {
      double m = 0.0;
      for (const auto& p : hooks.eval_pairs)
        m += implicit_reward_margin(state, p, sched, c.eval_draws, c.beta_dpo, rng::derive(c.seed, 0xE7A1));
      row.margin_eval = m / static_cast<double>(hooks.eval_pairs.size());
    }
    out.metrics.push_back(row);
    if (hooks.on_metrics) hooks.on_metrics(row);
  }
  out.state = std::move(state);
  return out;
}

inline std::string metrics_csv_header() { return "step,stage,dpo_loss,sft_loss,total_loss,grad_norm,margin_eval\n"; }

inline std::string metrics_csv_row(const MetricsRow& r) {
  auto num = [](double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  return std::to_string(r.step) + "," + std::to_string(r.stage) + "," + num(r.dpo_loss) + "," + num(r.sft_loss) +
         "," + num(r.total_loss) + "," + num(r.grad_norm) + "," + (r.margin_eval ? num(*r.margin_eval) : "") + "\n";
}

}  // namespace dfvpo
