#include <cmath>
#include <set>

#include "dfvpo/rng.hpp"
#include "test_util.hpp"

namespace dfvpo {
namespace {

TEST(Rng, InverseNormalMatchesErfc) {
  // Phi(z) = erfc(-z / sqrt 2) / 2 is an independent route back to p.
  for (double z : {-6.0, -3.1, -1.0, -0.2, 0.0, 0.7, 1.959963984540054, 4.5}) {
    const double p = 0.5 * std::erfc(-z / std::sqrt(2.0));
    EXPECT_NEAR(rng::inverse_normal_cdf(p), z, 1e-9 * std::max(1.0, std::abs(z)));
  }
}

TEST(Rng, CounterBasedDrawsArePureFunctions) {
  EXPECT_EQ(rng::uniform(1, 2, 3), rng::uniform(1, 2, 3));
  EXPECT_NE(rng::uniform(1, 2, 3), rng::uniform(1, 2, 4));
  EXPECT_NE(rng::uniform(1, 2, 3), rng::uniform(1, 3, 3));
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const double u = rng::uniform(9, 0, i);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, GaussianMoments) {
  const int n = 200000;
  double m = 0.0, v = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng::gaussian(5, 1, static_cast<std::uint64_t>(i));
    m += g;
    v += g * g;
  }
  m /= n;
  v = v / n - m * m;
  EXPECT_NEAR(m, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(Rng, PermutationIsAPermutation) {
  rng::Stream s(3, 4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = rng::permutation(17, s);
    EXPECT_EQ(std::set<std::size_t>(p.begin(), p.end()).size(), 17u);
    EXPECT_LT(*std::max_element(p.begin(), p.end()), 17u);
  }
}

TEST(Rng, IndexIsUnbiasedAcrossBuckets) {
  rng::Stream s(11, 0);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[s.index(6)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
  EXPECT_LT(chi2, 20.52);  // chi-square(5) upper 0.1% point
}

}  // namespace
}  // namespace dfvpo
