#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "funreg/quadrature.hpp"
#include "funreg/rng.hpp"
#include "funreg/stats.hpp"

using namespace funreg;

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  // 5-node rule is exact through degree 9: check int_0^1 x^d = 1/(d+1).
  const GaussLegendre rule = gauss_legendre(5, 0.0, 1.0);
  for (int d = 0; d <= 9; ++d) {
    double sum = 0.0;
    for (int g = 0; g < 5; ++g) sum += rule.weights[g] * std::pow(rule.nodes[g], d);
    CHECK(sum == doctest::Approx(1.0 / (d + 1)).epsilon(1e-13));
  }
  // weights sum to the interval length for a large rule as well
  const GaussLegendre big = gauss_legendre(64, 0.0, 1.0);
  CHECK(big.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  double sine = 0.0;
  for (int g = 0; g < 64; ++g) sine += big.weights[g] * std::sin(big.nodes[g]);
  CHECK(sine == doctest::Approx(1.0 - std::cos(1.0)).epsilon(1e-14));
}

TEST_CASE("chi-square CDF matches closed forms") {
  // dof = 2: F(x) = 1 - exp(-x/2)
  for (double x : {0.1, 1.0, 2.0, 4.60517, 10.0})
    CHECK(chi2_cdf(x, 2) == doctest::Approx(1.0 - std::exp(-0.5 * x)).epsilon(1e-12));
  // dof = 4: F(x) = 1 - exp(-x/2)(1 + x/2)
  for (double x : {0.5, 3.0, 8.0})
    CHECK(chi2_cdf(x, 4) ==
          doctest::Approx(1.0 - std::exp(-0.5 * x) * (1.0 + 0.5 * x)).epsilon(1e-12));
  CHECK(chi2_cdf(0.0, 3) == 0.0);
}

TEST_CASE("chi-square quantile") {
  // closed form for dof 2: q = -2 ln(alpha)
  CHECK(chi2_quantile(0.90, 2) == doctest::Approx(-2.0 * std::log(0.10)).epsilon(1e-10));
  CHECK(chi2_quantile(0.95, 2) == doctest::Approx(-2.0 * std::log(0.05)).epsilon(1e-10));
  for (double dof : {1.0, 2.0, 4.0, 9.0})
    for (double prob : {0.10, 0.50, 0.90, 0.99}) {
      const double q = chi2_quantile(prob, dof);
      CHECK(chi2_cdf(q, dof) == doctest::Approx(prob).epsilon(1e-10));
    }
  CHECK(chi2_quantile(0.0, 5) == 0.0);
}

TEST_CASE("rng substreams are deterministic and distinct") {
  Rng a = Rng::substream(42, 7);
  Rng b = Rng::substream(42, 7);
  Rng c = Rng::substream(42, 8);
  bool all_equal = true, any_differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto xa = a.next_u64(), xb = b.next_u64(), xc = c.next_u64();
    all_equal = all_equal && (xa == xb);
    any_differs = any_differs || (xa != xc);
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("rng permutation is a permutation") {
  Rng rng(123);
  const auto perm = rng.permutation(100);
  std::set<int> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);
}

TEST_CASE("rng normal moments") {
  Rng rng(9001);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 6.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("rng uniform_below is in range and roughly uniform") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) ++counts[rng.uniform_below(10)];
  for (int c : counts) CHECK(std::abs(c - 1000) < 150);
}
