#pragma once

// Toy video diffusion model: variance schedule, forward corruption, a small
// conditional MLP noise predictor with hand-written backpropagation, the
// denoising (SFT) loss and the ancestral sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dfvpo/error.hpp"
#include "dfvpo/media.hpp"
#include "dfvpo/rng.hpp"

namespace dfvpo {

// ---------------------------------------------------------------------------
// Tensor

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == numel(shape), Errc::ShapeMismatch, "tensor data does not match its shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static Tensor zeros(std::vector<std::size_t> s) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor filled(std::vector<std::size_t> s, double v) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor from_video(const Video& v) {
    const Shape& s = v.shape();
    return Tensor({s.frames, s.height, s.width, s.channels}, std::vector<double>(v.data().begin(), v.data().end()));
  }
  static Tensor gaussian(std::vector<std::size_t> s, rng::Stream& r) {
    Tensor out = zeros(std::move(s));
    for (double& x : out.data) x = r.gaussian();
    return out;
  }

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

// ---------------------------------------------------------------------------
// Noise schedule. Vectors are stored 0-based; step t (1-based) lives at t-1.

struct NoiseSchedule {
  std::size_t num_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(std::size_t t) const { return beta[t - 1]; }
  double alpha_at(std::size_t t) const { return alpha[t - 1]; }
  double alpha_bar_at(std::size_t t) const { return alpha_bar[t - 1]; }

  void check_step(std::size_t t) const {
    require(t >= 1 && t <= num_steps, Errc::StepOutOfRange,
            "step " + std::to_string(t) + " outside [1, " + std::to_string(num_steps) + "]");
  }
};

/// Linear betas from beta_start to beta_end inclusive.
inline NoiseSchedule build_schedule(std::size_t num_steps, double beta_start, double beta_end) {
  require(num_steps >= 1, Errc::InvalidRange, "num_steps must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Errc::InvalidRange,
          "need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.num_steps = num_steps;
  double prod = 1.0;
  for (std::size_t i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(num_steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

/// One forward transition: sqrt(alpha_t) x_{t-1} + sqrt(beta_t) z.
inline Tensor forward_step(const Tensor& x_prev, std::size_t t, const NoiseSchedule& schedule, rng::Stream& r) {
  schedule.check_step(t);
  const double a = std::sqrt(schedule.alpha_at(t));
  const double b = std::sqrt(schedule.beta_at(t));
  Tensor out = x_prev;
  for (double& x : out.data) x = a * x + b * r.gaussian();
  return out;
}

/// Closed-form corruption with an explicit cumulative alpha.
inline Tensor q_sample_alpha_bar(const Tensor& x0, double alpha_bar, const Tensor& eps) {
  require(x0.shape == eps.shape, Errc::ShapeMismatch, "x0 and eps shapes differ");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Tensor out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  schedule.check_step(t);
  return q_sample_alpha_bar(x0, schedule.alpha_bar_at(t), eps);
}

// ---------------------------------------------------------------------------
// Denoiser: x_t (+) sinusoidal(t) (+) embedding(c) -> SiLU -> SiLU -> linear

struct DenoiserConfig {
  Shape video{16, 32, 32, 1};
  std::size_t time_embed_dim = 8;
  std::size_t cond_embed_dim = 4;
  std::size_t num_conditions = 8;
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 32;

  std::size_t data_dim() const noexcept { return video.size(); }
  std::size_t input_dim() const noexcept { return data_dim() + time_embed_dim + cond_embed_dim; }
  bool operator==(const DenoiserConfig&) const = default;
};

/// Offsets of each block inside the flat parameter vector.
struct ParamLayout {
  std::size_t embed = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0, total = 0;

  explicit ParamLayout(const DenoiserConfig& c) {
    std::size_t o = 0;
    embed = o, o += c.num_conditions * c.cond_embed_dim;
    w1 = o, o += c.hidden1 * c.input_dim();
    b1 = o, o += c.hidden1;
    w2 = o, o += c.hidden2 * c.hidden1;
    b2 = o, o += c.hidden2;
    w3 = o, o += c.data_dim() * c.hidden2;
    b3 = o, o += c.data_dim();
    total = o;
  }
};

struct DenoiserParams {
  DenoiserConfig config;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const DenoiserParams&) const = default;
};

/// Normal(0, 1/fan_in) weights in every layer, zero biases and N(0, 1)
/// condition embeddings.
inline DenoiserParams init_params(const DenoiserConfig& c, std::uint64_t seed) {
  require(c.time_embed_dim % 2 == 0, Errc::InvalidConfig, "time_embed_dim must be even");
  require(c.num_conditions >= 1 && c.hidden1 >= 1 && c.hidden2 >= 1, Errc::InvalidConfig, "empty denoiser layer");
  const ParamLayout L(c);
  DenoiserParams p{c, std::vector<double>(L.total, 0.0)};
  rng::Stream r(seed, 0x1417);
  for (std::size_t i = L.embed; i < L.w1; ++i) p.values[i] = r.gaussian();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(c.input_dim()));
  for (std::size_t i = L.w1; i < L.b1; ++i) p.values[i] = s1 * r.gaussian();
  const double s2 = 1.0 / std::sqrt(static_cast<double>(c.hidden1));
  for (std::size_t i = L.w2; i < L.b2; ++i) p.values[i] = s2 * r.gaussian();
  const double s3 = 1.0 / std::sqrt(static_cast<double>(c.hidden2));
  for (std::size_t i = L.w3; i < L.b3; ++i) p.values[i] = s3 * r.gaussian();
  return p;
}

/// Fills every parameter with N(0, scale^2); used for gradient checks away
/// from the structured initialization.
inline DenoiserParams random_params(const DenoiserConfig& c, std::uint64_t seed, double scale = 0.5) {
  DenoiserParams p{c, std::vector<double>(ParamLayout(c).total)};
  rng::Stream r(seed, 0x7A2D);
  for (double& v : p.values) v = scale * r.gaussian();
  return p;
}

inline std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> e(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[i + half] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

}  // namespace detail

/// Activations kept for the backward pass.
struct ForwardCache {
  std::size_t condition = 0;
  Eigen::VectorXd input, pre1, h1, pre2, h2, out;
};

inline void denoiser_forward(const DenoiserParams& p, std::span<const double> x, std::size_t t, int condition,
                             ForwardCache& cache) {
  const DenoiserConfig& c = p.config;
  require(x.size() == c.data_dim(), Errc::ShapeMismatch, "input does not match the denoiser's video shape");
  require(condition >= 0 && static_cast<std::size_t>(condition) < c.num_conditions, Errc::ShapeMismatch,
          "condition label " + std::to_string(condition) + " outside the embedding table");
  const ParamLayout L(c);
  const double* v = p.values.data();
  const std::size_t D = c.data_dim(), In = c.input_dim();

  cache.condition = static_cast<std::size_t>(condition);
  cache.input.resize(static_cast<Eigen::Index>(In));
  std::copy(x.begin(), x.end(), cache.input.data());
  const auto temb = timestep_embedding(t, c.time_embed_dim);
  std::copy(temb.begin(), temb.end(), cache.input.data() + D);
  std::copy_n(v + L.embed + cache.condition * c.cond_embed_dim, c.cond_embed_dim,
              cache.input.data() + D + c.time_embed_dim);

  const auto h1n = static_cast<Eigen::Index>(c.hidden1), h2n = static_cast<Eigen::Index>(c.hidden2);
  detail::ConstMatMap W1(v + L.w1, h1n, static_cast<Eigen::Index>(In));
  detail::ConstMatMap W2(v + L.w2, h2n, h1n);
  detail::ConstMatMap W3(v + L.w3, static_cast<Eigen::Index>(D), h2n);

  cache.pre1 = W1 * cache.input + detail::ConstVecMap(v + L.b1, h1n);
  cache.h1 = cache.pre1.unaryExpr([](double z) { return z * detail::sigmoid(z); });
  cache.pre2 = W2 * cache.h1 + detail::ConstVecMap(v + L.b2, h2n);
  cache.h2 = cache.pre2.unaryExpr([](double z) { return z * detail::sigmoid(z); });
  cache.out = W3 * cache.h2 + detail::ConstVecMap(v + L.b3, static_cast<Eigen::Index>(D));
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
inline void denoiser_backward(const DenoiserParams& p, const ForwardCache& cache, std::span<const double> d_out,
                              std::span<double> grad) {
  const DenoiserConfig& c = p.config;
  const ParamLayout L(c);
  require(grad.size() == L.total, Errc::ShapeMismatch, "gradient buffer has the wrong size");
  const double* v = p.values.data();
  double* g = grad.data();
  const auto D = static_cast<Eigen::Index>(c.data_dim()), In = static_cast<Eigen::Index>(c.input_dim());
  const auto h1n = static_cast<Eigen::Index>(c.hidden1), h2n = static_cast<Eigen::Index>(c.hidden2);
  auto dsilu = [](double z) {
    const double s = detail::sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
  };

  detail::ConstVecMap dy(d_out.data(), D);
  detail::MatMap(g + L.w3, D, h2n).noalias() += dy * cache.h2.transpose();
  detail::VecMap(g + L.b3, D) += dy;

  const Eigen::VectorXd d2 =
      (detail::ConstMatMap(v + L.w3, D, h2n).transpose() * dy).cwiseProduct(cache.pre2.unaryExpr(dsilu));
  detail::MatMap(g + L.w2, h2n, h1n).noalias() += d2 * cache.h1.transpose();
  detail::VecMap(g + L.b2, h2n) += d2;

  const Eigen::VectorXd d1 =
      (detail::ConstMatMap(v + L.w2, h2n, h1n).transpose() * d2).cwiseProduct(cache.pre1.unaryExpr(dsilu));
  detail::MatMap(g + L.w1, h1n, In).noalias() += d1 * cache.input.transpose();
  detail::VecMap(g + L.b1, h1n) += d1;

  // Only the condition-embedding slice of the input is a parameter.
  const auto ce = static_cast<Eigen::Index>(c.cond_embed_dim);
  const Eigen::Index col0 = D + static_cast<Eigen::Index>(c.time_embed_dim);
  const Eigen::VectorXd d_embed = detail::ConstMatMap(v + L.w1, h1n, In).middleCols(col0, ce).transpose() * d1;
  detail::VecMap(g + L.embed + cache.condition * c.cond_embed_dim, ce) += d_embed;
}

inline std::vector<double> predict_noise(const DenoiserParams& p, std::span<const double> x_t, std::size_t t,
                                         int condition) {
  ForwardCache cache;
  denoiser_forward(p, x_t, t, condition, cache);
  return std::vector<double>(cache.out.data(), cache.out.data() + cache.out.size());
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over elements of (eps - prediction)^2.
inline double mean_squared(std::span<const double> eps, std::span<const double> pred) {
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

/// Denoising error of an arbitrary predictor f(x_t, t) -> eps_hat.
template <class Predictor>
double sft_loss_with(Predictor&& f, const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
  const Tensor x_t = q_sample(x0, t, eps, s);
  const std::vector<double> pred = f(std::span<const double>(x_t.data), t);
  require(pred.size() == eps.size(), Errc::ShapeMismatch, "prediction size differs from eps");
  return mean_squared(eps.data, pred);
}

inline double sft_loss(const DenoiserParams& p, const Tensor& x0, int condition, std::size_t t, const Tensor& eps,
                       const NoiseSchedule& s) {
  require(x0.size() == p.config.data_dim(), Errc::ShapeMismatch, "x0 does not match the denoiser");
  return sft_loss_with([&](std::span<const double> x, std::size_t tt) { return predict_noise(p, x, tt, condition); },
                       x0, t, eps, s);
}

/// Error together with the forward cache and d(error)/d(output), for reuse
/// by the preference objective.
struct DenoisingEval {
  double error = 0.0;
  ForwardCache cache;
  std::vector<double> d_error;  // d(error) / d(prediction)
};

inline DenoisingEval evaluate_denoising(const DenoiserParams& p, const Tensor& x0, int condition, std::size_t t,
                                        const Tensor& eps, const NoiseSchedule& s, bool want_grad) {
  require(x0.size() == p.config.data_dim() && eps.size() == x0.size(), Errc::ShapeMismatch,
          "x0/eps do not match the denoiser");
  DenoisingEval ev;
  const Tensor x_t = q_sample(x0, t, eps, s);
  denoiser_forward(p, x_t.data, t, condition, ev.cache);
  const std::span<const double> pred(ev.cache.out.data(), static_cast<std::size_t>(ev.cache.out.size()));
  ev.error = mean_squared(eps.data, pred);
  if (want_grad) {
    const double scale = 2.0 / static_cast<double>(eps.size());
    ev.d_error.resize(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) ev.d_error[i] = scale * (pred[i] - eps.data[i]);
  }
  return ev;
}

struct SftSample {
  Tensor x0;
  int condition = 0;
  std::size_t t = 1;
  Tensor eps;
};

/// Exact gradient of the batch-mean denoising loss; samples are reduced in
/// batch order.
inline std::vector<double> sft_grad(const DenoiserParams& p, std::span<const SftSample> batch,
                                    const NoiseSchedule& s) {
  require(!batch.empty(), Errc::ShapeMismatch, "empty batch");
  std::vector<double> grad(p.size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& b : batch) {
    auto ev = evaluate_denoising(p, b.x0, b.condition, b.t, b.eps, s, true);
    for (double& d : ev.d_error) d *= w;
    denoiser_backward(p, ev.cache, ev.d_error, grad);
  }
  return grad;
}

inline double sft_batch_loss(const DenoiserParams& p, std::span<const SftSample> batch, const NoiseSchedule& s) {
  double acc = 0.0;
  for (const auto& b : batch) acc += sft_loss(p, b.x0, b.condition, b.t, b.eps, s);
  return acc / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Sampling

/// Reverse chain from x_T ~ N(0, I):
///   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * f(x_t, t)) / sqrt(alpha_t) + sqrt(beta_t) z,  z = 0 at t = 1.
/// Clamped to [0, 1] only after the last step.
template <class Predictor>
Tensor ancestral_sample_with(Predictor&& f, std::vector<std::size_t> shape, const NoiseSchedule& s, rng::Stream& r) {
  Tensor x = Tensor::gaussian(std::move(shape), r);
  for (std::size_t t = s.num_steps; t >= 1; --t) {
    const std::vector<double> eps_hat = f(std::span<const double>(x.data), t);
    const double coef = s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha_at(t));
    const double sigma = std::sqrt(s.beta_at(t));
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double next = (x.data[i] - coef * eps_hat[i]) * inv_sqrt_alpha;
      if (t > 1) next += sigma * r.gaussian();
      x.data[i] = next;
    }
  }
  for (double& v : x.data) v = std::clamp(v, 0.0, 1.0);
  return x;
}

inline Tensor ancestral_sample(const DenoiserParams& p, int condition, const NoiseSchedule& s, rng::Stream& r) {
  const Shape& v = p.config.video;
  return ancestral_sample_with(
      [&](std::span<const double> x, std::size_t t) { return predict_noise(p, x, t, condition); },
      {v.frames, v.height, v.width, v.channels}, s, r);
}

inline Video tensor_to_video(const Tensor& x, std::string id = {}) {
  require(x.shape.size() == 4, Errc::ShapeMismatch, "expected a T x H x W x C tensor");
  std::vector<double> d = x.data;
  for (double& v : d) v = std::clamp(v, 0.0, 1.0);
  return Video(Shape{x.shape[0], x.shape[1], x.shape[2], x.shape[3]}, Dtype::F64, std::move(d), std::move(id));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "DFPM" | format_version u32 | T H W C u32 | time_embed cond_embed num_conditions hidden1 hidden2 u32
//   | num_sets u32 | num_params u64 | num_sets * num_params f64 (little-endian)

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const std::vector<const DenoiserParams*>& sets) {
  require(!sets.empty(), Errc::InvalidConfig, "checkpoint needs at least one parameter set");
  const DenoiserConfig& c = sets.front()->config;
  std::string out = "DFPM";
  detail::put_u32(out, kCheckpointVersion);
  for (std::size_t d : {c.video.frames, c.video.height, c.video.width, c.video.channels, c.time_embed_dim,
                        c.cond_embed_dim, c.num_conditions, c.hidden1, c.hidden2})
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_u32(out, static_cast<std::uint32_t>(sets.size()));
  detail::put_u64(out, sets.front()->size());
  for (const auto* p : sets) {
    require(p->config == c && p->size() == sets.front()->size(), Errc::ShapeMismatch,
            "checkpoint parameter sets disagree");
    for (double x : p->values) detail::put_f64(out, x);
  }
  return out;
}

inline std::vector<DenoiserParams> decode_checkpoint(std::string_view bytes) {
  require(bytes.size() >= 4 && bytes.substr(0, 4) == "DFPM", Errc::MagicMismatch, "not a DFPM checkpoint");
  constexpr std::size_t kHeader = 4 + 4 + 9 * 4 + 4 + 8;
  require(bytes.size() >= kHeader, Errc::TruncatedPayload, "checkpoint header cut short");
  require(detail::get_u32(bytes, 4) == kCheckpointVersion, Errc::InvalidConfig, "unsupported checkpoint version");
  std::size_t dims[9];
  for (std::size_t i = 0; i < 9; ++i) dims[i] = detail::get_u32(bytes, 8 + 4 * i);
  DenoiserConfig c;
  c.video = Shape{dims[0], dims[1], dims[2], dims[3]};
  c.time_embed_dim = dims[4];
  c.cond_embed_dim = dims[5];
  c.num_conditions = dims[6];
  c.hidden1 = dims[7];
  c.hidden2 = dims[8];
  const std::size_t sets = detail::get_u32(bytes, 44);
  const std::size_t n = detail::get_u64(bytes, 48);
  require(n == ParamLayout(c).total, Errc::ShapeMismatch, "parameter count disagrees with layer dims");
  require(bytes.size() >= kHeader + sets * n * 8, Errc::TruncatedPayload, "checkpoint payload cut short");
  std::vector<DenoiserParams> out;
  for (std::size_t k = 0; k < sets; ++k) {
    DenoiserParams p{c, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) p.values[i] = detail::get_f64(bytes, kHeader + 8 * (k * n + i));
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_checkpoint(const fs::path& path, const std::vector<const DenoiserParams*>& sets) {
  detail::write_file(path, encode_checkpoint(sets));
}

inline std::vector<DenoiserParams> load_checkpoint(const fs::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace dfvpo
