// Test-only reference implementations, independent of the library's
// computational paths.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "funreg/bspline.hpp"
#include "funreg/fpca.hpp"
#include "funreg/longitudinal.hpp"
#include "funreg/quadrature.hpp"
#include "funreg/rng.hpp"

namespace oracles {

// Naive Cox-de Boor recursion, B_{i,k}(x) on an explicit knot vector with
// the 0/0 := 0 convention; the rightmost point belongs to the last nonempty
// span.
inline double cox_de_boor(const std::vector<double>& knots, int i, int k, double x,
                          double right_end) {
  if (k == 0) {
    if (x == right_end) return knots[i] < knots[i + 1] && knots[i + 1] == right_end ? 1.0 : 0.0;
    return knots[i] <= x && x < knots[i + 1] ? 1.0 : 0.0;
  }
  double left = 0.0, right = 0.0;
  const double dl = knots[i + k] - knots[i];
  if (dl > 0.0) left = (x - knots[i]) / dl * cox_de_boor(knots, i, k - 1, x, right_end);
  const double dr = knots[i + k + 1] - knots[i + 1];
  if (dr > 0.0)
    right = (knots[i + k + 1] - x) / dr * cox_de_boor(knots, i + 1, k - 1, x, right_end);
  return left + right;
}

// Full basis row by the naive recursion, for a clamped equispaced basis.
inline Eigen::VectorXd cox_de_boor_row(const funreg::SplineBasis& basis, double x) {
  const int d = basis.degree();
  const int N = basis.size();
  std::vector<double> knots;
  for (int i = 0; i <= d; ++i) knots.push_back(basis.a());
  for (double k : basis.interior_knots()) knots.push_back(k);
  for (int i = 0; i <= d; ++i) knots.push_back(basis.b());
  Eigen::VectorXd row(N);
  for (int i = 0; i < N; ++i) row[i] = cox_de_boor(knots, i, d, x, basis.b());
  return row;
}

// L2 projection of a smooth function onto the spline space.
inline Eigen::VectorXd project(const funreg::SplineBasis& basis,
                               const std::function<double(double)>& f) {
  const Eigen::MatrixXd J = basis.gram();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(basis.size());
  const auto& breaks = basis.breakpoints();
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const funreg::GaussLegendre rule = funreg::gauss_legendre(16, breaks[k], breaks[k + 1]);
    for (int g = 0; g < 16; ++g)
      rhs += rule.weights[g] * f(rule.nodes[g]) * basis.evaluate(rule.nodes[g]);
  }
  return J.llt().solve(rhs);
}

// A reduced-rank model with hand-built components: each target function is
// projected onto the spline space and the coefficient columns are
// Gram-Schmidt orthonormalized in the J metric, so H'JH = I holds exactly.
inline funreg::ReducedRankModel make_component_model(
    const funreg::SplineBasis& basis, const std::function<double(double)>& mu,
    const std::vector<std::function<double(double)>>& components,
    const Eigen::VectorXd& lambda, double sigma, double nu) {
  const Eigen::MatrixXd J = basis.gram();
  const int p = static_cast<int>(components.size());
  Eigen::MatrixXd H(basis.size(), p);
  for (int k = 0; k < p; ++k) {
    Eigen::VectorXd h = project(basis, components[k]);
    for (int j = 0; j < k; ++j) h -= (H.col(j).dot(J * h)) * H.col(j);
    H.col(k) = h / std::sqrt(h.dot(J * h));
  }
  funreg::ReducedRankModel model{basis};
  model.xi = project(basis, mu);
  model.H = H;
  model.lambda = lambda;
  model.sigma = sigma;
  model.nu = nu;
  return model;
}

// Draws a sample exactly from a reduced-rank model (Gaussian scores/noise).
// Times are uniform on the domain, or a shared equispaced grid when
// common_grid is true.  Returns the sample together with the score matrix.
struct ModelSample {
  funreg::LongitudinalSample sample;
  Eigen::MatrixXd scores;  // n x p, U_i = Lambda^{1/2} z_i
};

inline ModelSample sample_from_model(const funreg::ReducedRankModel& model, int n, int m,
                                     funreg::Rng& rng, bool common_grid = false) {
  ModelSample out;
  out.sample.a = model.basis.a();
  out.sample.b = model.basis.b();
  out.scores.resize(n, model.rank());
  std::vector<double> shared(m);
  for (int j = 0; j < m; ++j)
    shared[j] = model.basis.a() +
                (model.basis.b() - model.basis.a()) * (m == 1 ? 0.5 : j / (m - 1.0));
  for (int i = 0; i < n; ++i) {
    funreg::Curve curve;
    curve.id = std::to_string(i);
    curve.times.resize(m);
    if (common_grid) {
      curve.times = shared;
    } else {
      for (int j = 0; j < m; ++j)
        curve.times[j] =
            model.basis.a() + (model.basis.b() - model.basis.a()) * rng.uniform01();
    }
    Eigen::VectorXd u(model.rank());
    for (int k = 0; k < model.rank(); ++k)
      u[k] = std::sqrt(model.lambda[k]) * rng.normal();
    out.scores.row(i) = u.transpose();
    const Eigen::MatrixXd B = model.basis.evaluate(curve.times);
    const Eigen::VectorXd mean = B * (model.xi + model.H * u);
    curve.values.resize(m);
    for (int j = 0; j < m; ++j) curve.values[j] = mean[j] + model.sigma * rng.normal();
    out.sample.curves.push_back(std::move(curve));
  }
  return out;
}

// Classical PCA of the spline-projected curves on a dense common grid:
// unpenalized per-curve least-squares coefficients, their mean, and the
// eigenpairs of the coefficient covariance in the J metric.
struct DensePca {
  Eigen::VectorXd mean_coef;
  Eigen::MatrixXd H;
  Eigen::VectorXd lambda;
};

inline DensePca dense_pca(const funreg::LongitudinalSample& sample,
                          const funreg::SplineBasis& basis, int p) {
  const int n = sample.n_curves();
  const int N = basis.size();
  Eigen::MatrixXd coefs(n, N);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd B = basis.evaluate(sample.curves[i].times);
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(
        sample.curves[i].values.data(), sample.curves[i].values.size());
    coefs.row(i) = (B.transpose() * B).ldlt().solve(B.transpose() * x).transpose();
  }
  DensePca out;
  out.mean_coef = coefs.colwise().mean();
  Eigen::MatrixXd centered = coefs.rowwise() - out.mean_coef.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / n;
  const Eigen::MatrixXd J = basis.gram();
  const Eigen::LLT<Eigen::MatrixXd> llt(J);
  const Eigen::MatrixXd T = llt.matrixL().transpose() * cov * llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (T + T.transpose()));
  out.H.resize(N, p);
  out.lambda.resize(p);
  for (int k = 0; k < p; ++k) {
    const Eigen::VectorXd u = eig.eigenvectors().col(N - 1 - k);
    out.H.col(k) = llt.matrixL().transpose().solve(u);
    out.lambda[k] = eig.eigenvalues()[N - 1 - k];
  }
  return out;
}

}  // namespace oracles
