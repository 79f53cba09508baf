#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "funreg/io.hpp"
#include "funreg/simulation.hpp"
#include "oracles.hpp"

using namespace funreg;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

double sine1(double s) { return std::numbers::sqrt2 * std::sin(std::numbers::pi * s); }
double sine2(double s) { return std::numbers::sqrt2 * std::sin(2 * std::numbers::pi * s); }

}  // namespace

TEST_CASE("generate_replicate") {
  SUBCASE("zero coefficient and zero noise give V = W and exact curves") {
    SimDesign design;
    design.n = 20;
    design.m = 10;
    design.theta_signal = 0.0;
    design.noise_sd = 0.0;
    design.seed = 11;
    const SimReplicate rep = generate_replicate(design, 0);
    CHECK((rep.V.array() == rep.W.array()).all());
    CHECK(rep.contaminated_ids.empty());
  }

  SUBCASE("emitted values reconstruct bit-for-bit from scores, grid and noise") {
    SimDesign design;
    design.seed = 22;
    const SimReplicate rep = generate_replicate(design, 3);
    for (int i = 0; i < design.n; ++i)
      for (int j = 0; j < design.m; ++j) {
        double v = 0.0;
        for (int k = 0; k < design.p; ++k) {
          const double component =
              std::numbers::sqrt2 * std::sin((k + 1) * std::numbers::pi * rep.grid[i][j]);
          v += rep.U(i, k) * component;
        }
        v += rep.noise_x[i][j];
        CHECK(rep.sample_x.curves[i].values[j] == v);
      }
  }

  SUBCASE("score covariance matches diag(1, 1/2) over many draws") {
    SimDesign design;
    design.n = 10000;
    design.m = 1;
    design.p = 2;
    design.q = 2;
    design.seed = 33;
    const SimReplicate rep = generate_replicate(design, 0);
    const Eigen::MatrixXd cov = rep.U.transpose() * rep.U / design.n;
    CHECK(std::abs(cov(0, 0) - 1.0) <= 3.0 * std::sqrt(2.0 / design.n));
    CHECK(std::abs(cov(1, 1) - 0.5) <= 3.0 * 0.5 * std::sqrt(2.0 / design.n));
    CHECK(std::abs(cov(0, 1)) <= 3.0 * std::sqrt(0.5 / design.n));
  }

  SUBCASE("deterministic in (seed, rep_index)") {
    SimDesign design;
    design.seed = 44;
    const SimReplicate a = generate_replicate(design, 5);
    const SimReplicate b = generate_replicate(design, 5);
    const SimReplicate c = generate_replicate(design, 6);
    CHECK((a.U.array() == b.U.array()).all());
    CHECK((a.U.array() != c.U.array()).any());
  }
}

TEST_CASE("contaminate") {
  SimDesign design;
  design.n = 50;
  design.m = 8;
  design.seed = 55;
  const SimReplicate clean = generate_replicate(design, 0);

  SUBCASE("epsilon = 0 is the identity") {
    const SimReplicate same = contaminate(clean, 0.0);
    CHECK(same.contaminated_ids.empty());
    CHECK((same.U.array() == clean.U.array()).all());
  }

  SUBCASE("floor(eps n) curves are shifted and decoupled") {
    const SimReplicate dirty = contaminate(clean, 0.10);
    REQUIRE(dirty.contaminated_ids.size() == 5);
    for (int idx : dirty.contaminated_ids) {
      CHECK(dirty.U(idx, 0) == clean.U(idx, 0) + 5.0);
      CHECK(dirty.U(idx, 1) == clean.U(idx, 1));
      CHECK((dirty.V.row(idx).array() == clean.W.row(idx).array()).all());
      CHECK(dirty.grid[idx] == clean.grid[idx]);
    }
    // untouched curves are bit-identical
    for (int i = 0; i < design.n; ++i) {
      if (std::find(dirty.contaminated_ids.begin(), dirty.contaminated_ids.end(), i) !=
          dirty.contaminated_ids.end())
        continue;
      CHECK(dirty.sample_x.curves[i].values == clean.sample_x.curves[i].values);
    }
  }
}

TEST_CASE("rise") {
  const std::vector<double> breaks = {0.0, 0.25, 0.5, 0.75, 1.0};

  SUBCASE("identical surfaces have zero distance") {
    Eigen::MatrixXd theta(2, 2);
    theta << 3.0, 0.0, 0.0, 0.0;
    const SurfaceSpec a = surface_from_sines(theta);
    CHECK(rise(a, a, breaks, breaks) == 0.0);
  }

  SUBCASE("orthonormal sine bases give the Frobenius distance") {
    Eigen::MatrixXd ta(2, 2), tb(2, 2);
    ta << 3.0, 0.2, -0.4, 1.0;
    tb << 2.0, -0.3, 0.0, 0.5;
    const double r = rise(surface_from_sines(ta), surface_from_sines(tb), breaks, breaks);
    CHECK(r == doctest::Approx((ta - tb).norm()).epsilon(1e-10));
  }

  SUBCASE("identical orthonormal spline bases give the Frobenius distance") {
    const SplineBasis basis(0.0, 1.0, 7, 3);
    Eigen::VectorXd lambda(2);
    lambda << 1.0, 0.5;
    const ReducedRankModel model = oracles::make_component_model(
        basis, [](double) { return 0.0; }, {sine1, sine2}, lambda, 0.1, kInf);
    GmtFit fa, fb;
    fa.theta.resize(2, 2);
    fa.theta << 1.0, -0.7, 0.3, 0.9;
    fb.theta.resize(2, 2);
    fb.theta << 0.2, 0.1, -0.5, 1.4;
    const SurfaceSpec a = surface_from_fit(fa, model, model);
    const SurfaceSpec b = surface_from_fit(fb, model, model);
    const double r = rise(a, b, basis.breakpoints(), basis.breakpoints());
    CHECK(r == doctest::Approx((fa.theta - fb.theta).norm()).epsilon(1e-8));
  }

  SUBCASE("a zero estimate against a single strong term gives that coefficient") {
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd t0 = Eigen::MatrixXd::Zero(2, 2);
    t0(0, 0) = 3.0;
    const double r =
        rise(surface_from_sines(zero), surface_from_sines(t0), breaks, breaks);
    CHECK(r == doctest::Approx(3.0).epsilon(1e-10));
  }
}

TEST_CASE("run_table1 smoke: shape, finiteness, thread determinism") {
  SimDesign design;
  design.n = 30;
  design.m = 15;
  design.p = 2;
  design.q = 2;
  design.epsilon = 0.0;
  design.theta_signal = 3.0;

  std::vector<EstimatorSpec> estimators(2);
  estimators[0] = {"ls", false, 5.0, 0.0, TrimKind::Unit};
  estimators[1] = {"gmt", true, 5.0, 0.10, TrimKind::Metric};

  const SimTable a = run_table1({design}, estimators, 4, 123, 1);
  const SimTable b = run_table1({design}, estimators, 4, 123, 2);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].estimator == "ls");
  CHECK(a.rows[1].estimator == "gmt");
  for (const auto& row : a.rows) {
    CHECK(row.n_fail == 0);
    CHECK(std::isfinite(row.value));
    CHECK(row.value > 0.0);
    CHECK(row.se >= 0.0);
  }
  CHECK(table_to_csv(a) == table_to_csv(b));
  CHECK(table_to_json(a) == table_to_json(b));

  const SimTable c = run_table1({design}, estimators, 4, 124, 1);
  CHECK(table_to_csv(a) != table_to_csv(c));
}

TEST_CASE("run_table2 smoke: shape and thread determinism") {
  SimDesign design;
  design.n = 60;
  design.m = 10;
  design.p = 2;
  design.q = 2;
  design.theta_signal = 0.0;

  const SimTable a = run_table2({design}, 6, 321, 2);
  const SimTable b = run_table2({design}, 6, 321, 1);
  REQUIRE(a.rows.size() == 6);
  CHECK(a.rows[0].estimator == "ls");
  CHECK(a.rows[0].alpha == 0.10);
  CHECK(a.rows[3].estimator == "gmt");
  for (const auto& row : a.rows) {
    CHECK(row.value >= 0.0);
    CHECK(row.value <= 1.0);
  }
  CHECK(table_to_csv(a) == table_to_csv(b));
}

TEST_CASE("leverage contamination pulls the least-squares slope toward zero") {
  SimDesign clean;  // n=50, m=20, p=q=2, theta11 = 3
  SimDesign dirty = clean;
  dirty.epsilon = 0.20;
  std::vector<EstimatorSpec> ls(1);
  ls[0] = {"ls", false, 5.0, 0.0, TrimKind::Unit};

  const SimTable table = run_table1({clean, dirty}, ls, 200, 424242, 2);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[1].mean_theta11 < table.rows[0].mean_theta11);
  CHECK(table.rows[0].mean_theta11 > 2.0);   // near the true 3 on clean data
  CHECK(table.rows[1].mean_theta11 < 1.5);   // strongly attenuated at eps = .2
}

TEST_CASE("run_table2 rejects signal designs") {
  SimDesign design;
  design.theta_signal = 3.0;
  CHECK_THROWS_AS(run_table2({design}, 5, 1, 1), std::invalid_argument);
}

TEST_CASE("empty grids are rejected") {
  CHECK_THROWS_AS(run_table1({}, {}, 5, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(run_table2({}, 5, 1, 1), std::invalid_argument);
}
