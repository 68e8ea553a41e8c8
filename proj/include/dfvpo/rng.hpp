#pragma once

// Counter-based random numbers. Every variate is a pure function of
// (seed, stream, index), so results do not depend on iteration order or on
// how work is split across threads.
//
//   bits(seed, stream, index) = mix(mix(seed ^ mix(stream + G)) + index)
//   uniform  = ((bits >> 11) + 0.5) * 2^-53          in the open interval (0, 1)
//   gaussian = Phi^-1(uniform)                        (Wichura AS241)
//   index in [0, n) = floor(uniform * n)
//
// where mix is the SplitMix64 finalizer and G = 0x9E3779B97F4A7C15.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace dfvpo::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  return mix(mix(seed ^ mix(stream + kGolden)) + index);
}

/// Child seed for a named sub-purpose; used to split one run seed into
/// independent keys (per step, per pair, per stage ...).
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix(seed + kGolden * (tag + 1));
}

constexpr double to_unit(std::uint64_t b) noexcept {
  return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
}

/// Inverse of the standard normal CDF, algorithm AS241 (PPND16); relative
/// accuracy about 1e-16 over the open unit interval.
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.4952788528545610 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  return to_unit(bits(seed, stream, index));
}

inline double gaussian(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return inverse_normal_cdf(uniform(seed, stream, index));
}

/// Sequential view over one (seed, stream) key: the counter is the index.
class Stream {
 public:
  constexpr Stream() = default;
  constexpr Stream(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t next_bits() noexcept { return bits(seed_, stream_, counter_++); }
  double uniform() noexcept { return to_unit(next_bits()); }
  double gaussian() { return inverse_normal_cdf(uniform()); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) noexcept {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  Stream split(std::uint64_t tag) const noexcept { return Stream(derive(seed_, tag), stream_); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates: for i = n-1 .. 1, swap(p[i], p[index(i+1)]).
inline std::vector<std::size_t> permutation(std::size_t n, Stream& s) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) std::swap(p[i], p[s.index(i + 1)]);
  return p;
}

}  // namespace dfvpo::rng
