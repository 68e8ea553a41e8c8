#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dfvpo::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

/// Standard error of the mean (sample standard deviation / sqrt(n)).
inline double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
inline double binomial_upper_tail(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  double p = 0.0;
  for (std::size_t i = k; i <= n; ++i) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(i) + 1.0) -
                         std::lgamma(static_cast<double>(n - i) + 1.0);
    p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

/// One-sided sign test of "median > 0"; zeros are dropped.
inline double sign_test_greater(std::span<const double> xs) {
  std::size_t pos = 0, n = 0;
  for (double x : xs) {
    if (x == 0.0) continue;
    ++n;
    if (x > 0.0) ++pos;
  }
  return n == 0 ? 1.0 : binomial_upper_tail(pos, n);
}

}  // namespace dfvpo::stats
