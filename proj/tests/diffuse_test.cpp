#include <cmath>

#include "dfvpo/diffuse.hpp"
#include "test_util.hpp"

namespace dfvpo {
namespace {

// 2x2x2x1 video, 116 parameters in total.
DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.video = Shape{2, 2, 2, 1};
  c.time_embed_dim = 2;
  c.cond_embed_dim = 2;
  c.num_conditions = 2;
  c.hidden1 = 4;
  c.hidden2 = 4;
  return c;
}

Tensor gaussian_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  rng::Stream r(seed, 1);
  return Tensor::gaussian(std::move(shape), r);
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(Schedule, SingleStep) {
  const auto s = build_schedule(1, 0.1, 0.1);
  ASSERT_EQ(s.alpha_bar.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
}

TEST(Schedule, FourStepProduct) {
  const auto s = build_schedule(4, 0.1, 0.4);
  EXPECT_NEAR(s.beta_at(2), 0.2, 1e-15);
  EXPECT_NEAR(s.alpha_bar_at(4), 0.9 * 0.8 * 0.7 * 0.6, 1e-15);
  EXPECT_NEAR(s.alpha_bar_at(4), 0.3024, 1e-15);
}

TEST(Schedule, InvalidRanges) {
  EXPECT_ERRC(build_schedule(10, 0.0, 0.1), Errc::InvalidRange);
  EXPECT_ERRC(build_schedule(10, 0.2, 0.1), Errc::InvalidRange);
  EXPECT_ERRC(build_schedule(10, 0.1, 1.0), Errc::InvalidRange);
  EXPECT_ERRC(build_schedule(0, 0.1, 0.2), Errc::InvalidRange);
}

TEST(Schedule, ConsistencyWithBruteForceProduct) {
  const auto s = build_schedule(50, 1e-4, 0.1);
  for (std::size_t t = 1; t <= 50; ++t) {
    double prod = 1.0;
    for (std::size_t u = 1; u <= t; ++u) prod *= 1.0 - (1e-4 + (0.1 - 1e-4) * double(u - 1) / 49.0);
    EXPECT_LE(std::abs(s.alpha_bar_at(t) - prod), 1e-15 * prod);
    EXPECT_GT(s.beta_at(t), 0.0);
    EXPECT_LT(s.beta_at(t), 1.0);
    if (t > 1) {
      EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
    }
  }
  EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta_at(50), 0.1);
}

TEST(ForwardStep, VanishingNoise) {
  const auto s = build_schedule(3, 1e-15, 1e-15);
  const Tensor x = gaussian_tensor({100}, 3);
  rng::Stream r(1, 2);
  const Tensor y = forward_step(x, 2, s, r);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-7);
}

TEST(ForwardStep, Deterministic) {
  const auto s = build_schedule(5, 0.1, 0.3);
  const Tensor x = gaussian_tensor({64}, 3);
  rng::Stream a(7, 0), b(7, 0);
  EXPECT_EQ(forward_step(x, 3, s, a), forward_step(x, 3, s, b));
  EXPECT_ERRC(forward_step(x, 6, s, a), Errc::StepOutOfRange);
  EXPECT_ERRC(forward_step(x, 0, s, a), Errc::StepOutOfRange);
}

TEST(ForwardStep, VarianceMatchesBeta) {
  const auto s = build_schedule(4, 0.1, 0.4);
  const std::size_t n = 100000;
  for (std::size_t t = 1; t <= 4; ++t) {
    rng::Stream r(11, t);
    const Tensor y = forward_step(Tensor::zeros({n}), t, s, r);
    double m = 0.0, v = 0.0;
    for (double x : y.data) m += x;
    m /= double(n);
    for (double x : y.data) v += (x - m) * (x - m);
    v /= double(n - 1);
    EXPECT_NEAR(v, s.beta_at(t), 0.05 * s.beta_at(t));
  }
}

TEST(ForwardStep, IteratedChainMatchesClosedForm) {
  const auto s = build_schedule(4, 0.1, 0.4);
  const std::size_t n = 100000;
  Tensor x = Tensor::filled({n}, 0.7);
  rng::Stream r(12, 0);
  for (std::size_t t = 1; t <= 4; ++t) {
    x = forward_step(x, t, s, r);
    double m = 0.0, v = 0.0;
    for (double e : x.data) m += e;
    m /= double(n);
    for (double e : x.data) v += (e - m) * (e - m);
    v /= double(n - 1);
    const double ab = s.alpha_bar_at(t);
    EXPECT_NEAR(m, std::sqrt(ab) * 0.7, 0.05 * std::sqrt(ab) * 0.7);
    EXPECT_NEAR(v, 1.0 - ab, 0.05 * (1.0 - ab));
  }
}

TEST(QSample, ScalarOracle) {
  const Tensor ones = Tensor::filled({5}, 1.0);
  const Tensor out = q_sample_alpha_bar(ones, 0.3024, ones);
  for (double x : out.data) EXPECT_NEAR(x, 1.385133, 1e-6);
  const auto s = build_schedule(4, 0.1, 0.4);
  EXPECT_EQ(q_sample(ones, 4, ones, s), out);
}

TEST(QSample, Endpoints) {
  const Tensor x0 = gaussian_tensor({6}, 1);
  const Tensor eps = gaussian_tensor({6}, 2);
  EXPECT_EQ(q_sample_alpha_bar(x0, 1.0, eps), x0);
  const Tensor scaled = q_sample_alpha_bar(x0, 0.49, Tensor::zeros({6}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(scaled.data[i], 0.7 * x0.data[i]);
  EXPECT_ERRC(q_sample_alpha_bar(x0, 0.5, Tensor::zeros({5})), Errc::ShapeMismatch);
}

TEST(SftLoss, StubbedPredictors) {
  const auto s = build_schedule(10, 0.01, 0.2);
  const Tensor x0 = gaussian_tensor({32}, 1);
  const Tensor eps = gaussian_tensor({32}, 2);
  auto exact = [&](std::span<const double>, std::size_t) { return eps.data; };
  EXPECT_EQ(sft_loss_with(exact, x0, 3, eps, s), 0.0);
  auto offset = [&](std::span<const double>, std::size_t) {
    auto p = eps.data;
    for (double& v : p) v += 0.3;
    return p;
  };
  EXPECT_NEAR(sft_loss_with(offset, x0, 3, eps, s), 0.09, 1e-15);
}

TEST(SftLoss, RandomModelIsFinitePositiveAndReproducible) {
  const auto c = tiny_config();
  const auto p = init_params(c, 5);
  const auto s = build_schedule(10, 0.01, 0.2);
  const Tensor x0 = gaussian_tensor({8}, 1), eps = gaussian_tensor({8}, 2);
  const double a = sft_loss(p, x0, 1, 4, eps, s);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_GT(a, 0.0);
  EXPECT_EQ(sft_loss(init_params(c, 5), x0, 1, 4, eps, s), a);
  EXPECT_ERRC(sft_loss(p, gaussian_tensor({9}, 1), 1, 4, gaussian_tensor({9}, 2), s), Errc::ShapeMismatch);
}

TEST(Denoiser, DefaultParameterCount) {
  DenoiserConfig c;
  EXPECT_EQ(ParamLayout(c).total, 1066464u);
  EXPECT_EQ(ParamLayout(tiny_config()).total, 116u);
}

TEST(SftGrad, ZeroWeightNetworkByHand) {
  // Every weight zero: output = b3, so d/d b3_i = 2 (b3_i - eps_i) / D and
  // d/d W3_ij = that times silu(b2_j); all earlier layers see zero signal.
  const auto c = tiny_config();
  const ParamLayout L(c);
  DenoiserParams p{c, std::vector<double>(L.total, 0.0)};
  for (std::size_t j = 0; j < c.hidden2; ++j) p.values[L.b2 + j] = 0.5 * double(j + 1);
  for (std::size_t i = 0; i < 8; ++i) p.values[L.b3 + i] = 0.1 * double(i);
  const auto s = build_schedule(10, 0.01, 0.2);
  const std::vector<SftSample> batch{{Tensor::zeros({8}), 0, 3, gaussian_tensor({8}, 4)}};
  const auto g = sft_grad(p, batch, s);
  for (std::size_t i = 0; i < 8; ++i) {
    const double dy = 2.0 * (p.values[L.b3 + i] - batch[0].eps.data[i]) / 8.0;
    EXPECT_NEAR(g[L.b3 + i], dy, 1e-15);
    for (std::size_t j = 0; j < c.hidden2; ++j) {
      const double b = p.values[L.b2 + j];
      EXPECT_NEAR(g[L.w3 + i * c.hidden2 + j], dy * b / (1.0 + std::exp(-b)), 1e-15);
    }
  }
  for (std::size_t k = 0; k < L.w3; ++k) EXPECT_EQ(g[k], 0.0) << k;
}

TEST(SftGrad, MatchesCentralDifferences) {
  const auto c = tiny_config();
  const auto s = build_schedule(10, 0.01, 0.2);
  for (std::uint64_t point = 0; point < 20; ++point) {
    DenoiserParams p = random_params(c, 100 + point);
    std::vector<SftSample> batch;
    for (int b = 0; b < 3; ++b)
      batch.push_back({gaussian_tensor({8}, 10 * point + b), b % 2, 1 + (point + b) % 10,
                       gaussian_tensor({8}, 1000 + 10 * point + b)});
    const auto g = sft_grad(p, batch, s);
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < p.size(); ++k) {
      DenoiserParams plus = p, minus = p;
      plus.values[k] += h;
      minus.values[k] -= h;
      const double fd = (sft_batch_loss(plus, batch, s) - sft_batch_loss(minus, batch, s)) / (2 * h);
      worst = std::max(worst, relative_error(g[k], fd));
    }
    EXPECT_LT(worst, 1e-4) << "point " << point;
  }
}

TEST(SftGrad, IsLinearInTheLoss) {
  // Duplicating the batch leaves the mean loss, and so the gradient, unchanged;
  // doubling the per-sample weight through a repeated sample doubles that term.
  const auto c = tiny_config();
  const auto s = build_schedule(10, 0.01, 0.2);
  const auto p = random_params(c, 3);
  const SftSample a{gaussian_tensor({8}, 1), 0, 2, gaussian_tensor({8}, 2)};
  const SftSample b{gaussian_tensor({8}, 3), 1, 5, gaussian_tensor({8}, 4)};
  const std::vector<SftSample> one{a}, two{a, a}, mixed{a, b}, mixed_b{b};
  const auto g1 = sft_grad(p, one, s), g2 = sft_grad(p, two, s);
  const auto gm = sft_grad(p, mixed, s), gb = sft_grad(p, mixed_b, s);
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_NEAR(g2[k], g1[k], 1e-14);
    EXPECT_NEAR(2.0 * gm[k], g1[k] + gb[k], 1e-14);
  }
}

TEST(Sampler, SingleStepZeroDenoiser) {
  const auto s = build_schedule(1, 0.1, 0.1);
  rng::Stream r(9, 0), r_copy(9, 0);
  auto zero = [](std::span<const double> x, std::size_t) { return std::vector<double>(x.size(), 0.0); };
  const Tensor out = ancestral_sample_with(zero, {2, 3, 3, 1}, s, r);
  const Tensor x_T = Tensor::gaussian({2, 3, 3, 1}, r_copy);
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_NEAR(out.data[i], std::clamp(x_T.data[i] / std::sqrt(0.9), 0.0, 1.0), 1e-15);
}

TEST(Sampler, DeterministicAndShaped) {
  const auto c = tiny_config();
  const auto p = init_params(c, 1);
  const auto s = build_schedule(20, 1e-4, 0.1);
  rng::Stream a(4, 0), b(4, 0);
  const Tensor x = ancestral_sample(p, 1, s, a);
  EXPECT_EQ(x, ancestral_sample(p, 1, s, b));
  EXPECT_EQ(x.shape, (std::vector<std::size_t>{2, 2, 2, 1}));
  for (double v : x.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Checkpoint, RoundTripWithTwoSets) {
  const auto c = tiny_config();
  const auto a = init_params(c, 1), b = random_params(c, 2);
  const std::string bytes = encode_checkpoint({&a, &b});
  EXPECT_EQ(bytes.size(), 56u + 2 * 116 * 8);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  EXPECT_ERRC(decode_checkpoint(bytes.substr(0, 100)), Errc::TruncatedPayload);
  EXPECT_ERRC(decode_checkpoint("XXXX" + bytes.substr(4)), Errc::MagicMismatch);
}

TEST(Denoiser, UnknownConditionIsRejected) {
  const auto p = init_params(tiny_config(), 1);
  EXPECT_ERRC(predict_noise(p, std::vector<double>(8, 0.0), 1, 2), Errc::ShapeMismatch);
}

}  // namespace
}  // namespace dfvpo
