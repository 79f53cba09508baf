#include "funreg/gmt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "funreg/errors.hpp"
#include "funreg/stats.hpp"

namespace funreg {

double rho(double x, double nu, int q) { return (nu + q) * std::log1p(x / nu); }

double rho_prime(double x, double nu, int q) { return (nu + q) / (nu + x); }

double rho_second(double x, double nu, int q) {
  return -(nu + q) / ((nu + x) * (nu + x));
}

double rho_value(double x, const GmtConfig& config, int q) {
  return config.family == RhoFamily::Linear ? x : rho(x, config.nu_rho, q);
}

double rho_prime_value(double x, const GmtConfig& config, int q) {
  return config.family == RhoFamily::Linear ? 1.0 : rho_prime(x, config.nu_rho, q);
}

double rho_second_value(double x, const GmtConfig& config, int q) {
  return config.family == RhoFamily::Linear ? 0.0 : rho_second(x, config.nu_rho, q);
}

Eigen::VectorXd metric_weights(const ScoreSet& scores, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0)
    throw std::invalid_argument("metric_weights: alpha must lie in [0, 1)");
  const int n = scores.n();
  if (alpha == 0.0) return Eigen::VectorXd::Ones(n);
  const double cutoff = chi2_quantile(1.0 - alpha, scores.p());
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = scores.D2[i] <= cutoff ? 1.0 : 0.0;
  return w;
}

Eigen::VectorXd rank_weights(const ScoreSet& scores, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0)
    throw std::invalid_argument("rank_weights: alpha must lie in [0, 1)");
  const int n = scores.n();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  const int k = static_cast<int>(std::ceil(alpha * n));
  if (k == 0) return w;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Largest D2 first; among ties the higher index goes first, so the lower
  // index survives.
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (scores.D2[i] != scores.D2[j]) return scores.D2[i] > scores.D2[j];
    return i > j;
  });
  for (int r = 0; r < k; ++r) w[order[r]] = 0.0;
  return w;
}

Eigen::VectorXd make_weights(const ScoreSet& scores, const WeightScheme& scheme) {
  switch (scheme.kind) {
    case TrimKind::Metric: return metric_weights(scores, scheme.alpha);
    case TrimKind::Rank: return rank_weights(scores, scheme.alpha);
    case TrimKind::Unit: return Eigen::VectorXd::Ones(scores.n());
  }
  throw std::invalid_argument("make_weights: unknown scheme");
}

std::vector<double> d2_quantiles(const ScoreSet& scores, const std::vector<double>& probs) {
  std::vector<double> sorted(scores.D2.data(), scores.D2.data() + scores.D2.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(probs.size());
  const int n = static_cast<int>(sorted.size());
  for (double prob : probs) {
    if (prob < 0.0 || prob > 1.0)
      throw std::invalid_argument("d2_quantiles: probability outside [0, 1]");
    const double h = (n - 1) * prob;
    const int lo = static_cast<int>(std::floor(h));
    const int hi = std::min(lo + 1, n - 1);
    out.push_back(sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]));
  }
  return out;
}

namespace {

// Symmetrize and, if nearly singular, ridge the scatter matrix.  Returns the
// guarded matrix; sets the flag when the ridge was needed.
Eigen::MatrixXd guard_scatter(Eigen::MatrixXd sigma, bool& regularized) {
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  const int q = static_cast<int>(sigma.rows());
  const double tr = sigma.trace();
  if (!(tr > 1e-300)) {
    regularized = true;
    return Eigen::MatrixXd::Identity(q, q) * 1e-12;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.eigenvalues().minCoeff() < 1e-10 * tr) {
    regularized = true;
    sigma.diagonal().array() += 1e-8 * tr / q;
  }
  return sigma;
}

Eigen::MatrixXd solve_weighted_ls(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                                  const Eigen::VectorXd& c) {
  const int p = static_cast<int>(U.cols());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p, static_cast<int>(V.cols()));
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    if (c[i] == 0.0) continue;
    S.noalias() += c[i] * U.row(i).transpose() * U.row(i);
    T.noalias() += c[i] * U.row(i).transpose() * V.row(i);
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const Eigen::VectorXd D = ldlt.vectorD();
  const double dmax = D.maxCoeff();
  if (!(dmax > 0.0) || D.minCoeff() <= 1e-12 * dmax)
    throw NumericalError("gmt: singular weighted design");
  return ldlt.solve(T);
}

Eigen::VectorXd scaled_distances(const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& sigma,
                                 const Eigen::VectorXd& w) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NumericalError("gmt: scatter matrix lost positive definiteness");
  Eigen::VectorXd e(residuals.rows());
  for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
    const Eigen::VectorXd r = residuals.row(i).transpose();
    e[i] = w[i] * r.dot(llt.solve(r));
  }
  return e;
}

}  // namespace

double gmt_objective(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                     const Eigen::VectorXd& weights, const Eigen::MatrixXd& theta,
                     const Eigen::MatrixXd& sigma, const GmtConfig& config) {
  const int q = static_cast<int>(V.cols());
  const Eigen::MatrixXd residuals = V - U * theta;
  const Eigen::VectorXd e = scaled_distances(residuals, sigma, weights);
  double obj = 0.0;
  for (int i = 0; i < e.size(); ++i) obj += rho_value(e[i], config, q);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  double logdet = 0.0;
  for (int k = 0; k < q; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
  return obj + static_cast<double>(U.rows()) * logdet;
}

GmtFit least_squares(const ScoreSet& scores) {
  const int n = scores.n();
  GmtFit fit;
  fit.weights = Eigen::VectorXd::Ones(n);
  try {
    fit.theta = solve_weighted_ls(scores.U, scores.V, fit.weights);
  } catch (const NumericalError&) {
    throw NumericalError("least_squares: singular score covariance");
  }
  fit.residuals = scores.V - scores.U * fit.theta;
  fit.sigma = guard_scatter(fit.residuals.transpose() * fit.residuals / n,
                            fit.sigma_regularized);
  fit.e = scaled_distances(fit.residuals, fit.sigma, fit.weights);
  fit.n_trimmed = 0;
  fit.converged = true;
  return fit;
}

GmtFit gmt_fit(const ScoreSet& scores, const GmtConfig& config) {
  return gmt_fit_with_weights(scores.U, scores.V, make_weights(scores, config.weights), config);
}

GmtFit gmt_fit_with_weights(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                            const Eigen::VectorXd& weights, const GmtConfig& config) {
  const int n = static_cast<int>(U.rows());
  const int p = static_cast<int>(U.cols());
  const int q = static_cast<int>(V.cols());
  if (V.rows() != n || weights.size() != n)
    throw std::invalid_argument("gmt_fit: inconsistent input dimensions");
  if (config.tol <= 0.0 || config.max_iter < 1)
    throw std::invalid_argument("gmt_fit: tol must be positive and max_iter >= 1");

  int n_active = 0;
  for (int i = 0; i < n; ++i)
    if (weights[i] > 0.0) ++n_active;
  if (n_active < p + q)
    throw NumericalError("gmt_fit: fewer than p + q untrimmed observations");

  GmtFit fit;
  fit.weights = weights;
  fit.n_trimmed = n - n_active;

  // Start from least squares restricted to the untrimmed observations.
  Eigen::MatrixXd theta = solve_weighted_ls(U, V, weights);
  Eigen::MatrixXd residuals = V - U * theta;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < n; ++i)
    if (weights[i] > 0.0)
      sigma.noalias() += residuals.row(i).transpose() * residuals.row(i);
  sigma = guard_scatter(sigma / n, fit.sigma_regularized);

  fit.objective_trace.push_back(gmt_objective(U, V, weights, theta, sigma, config));

  bool converged = false;
  int iter = 0;
  Eigen::VectorXd c(n);
  for (iter = 0; iter < config.max_iter; ++iter) {
    const Eigen::VectorXd e = scaled_distances(residuals, sigma, weights);
    for (int i = 0; i < n; ++i) c[i] = rho_prime_value(e[i], config, q) * weights[i];

    const Eigen::MatrixXd theta_star = solve_weighted_ls(U, V, c);
    // Fixed-point residual of both update maps at the current iterate.
    Eigen::MatrixXd sigma_map = Eigen::MatrixXd::Zero(q, q);
    for (int i = 0; i < n; ++i)
      if (c[i] != 0.0) sigma_map.noalias() += c[i] * residuals.row(i).transpose() * residuals.row(i);
    sigma_map = guard_scatter(sigma_map / n, fit.sigma_regularized);
    const double residual = std::max((theta_star - theta).cwiseAbs().maxCoeff(),
                                     (sigma_map - sigma).cwiseAbs().maxCoeff());
    if (residual < config.tol) {
      converged = true;
      break;
    }

    theta = theta_star;
    residuals = V - U * theta;
    Eigen::MatrixXd sigma_new = Eigen::MatrixXd::Zero(q, q);
    for (int i = 0; i < n; ++i)
      if (c[i] != 0.0)
        sigma_new.noalias() += c[i] * residuals.row(i).transpose() * residuals.row(i);
    sigma = guard_scatter(sigma_new / n, fit.sigma_regularized);
    fit.objective_trace.push_back(gmt_objective(U, V, weights, theta, sigma, config));
  }

  fit.theta = theta;
  fit.sigma = sigma;
  fit.residuals = residuals;
  fit.e = scaled_distances(residuals, sigma, weights);
  fit.converged = converged;
  fit.n_iter = iter;
  return fit;
}

SlopeSurface slope_surface(const GmtFit& fit, const ReducedRankModel& model_x,
                           const ReducedRankModel& model_y, const Eigen::VectorXd& s_grid,
                           const Eigen::VectorXd& t_grid) {
  if (fit.theta.rows() != model_x.rank() || fit.theta.cols() != model_y.rank())
    throw std::invalid_argument("slope_surface: theta dimensions do not match the models");
  SlopeSurface surface;
  surface.s_grid = s_grid;
  surface.t_grid = t_grid;
  surface.theta = fit.theta;
  const Eigen::MatrixXd phi = model_x.components_on(s_grid);  // ns x p
  const Eigen::MatrixXd psi = model_y.components_on(t_grid);  // nt x q
  surface.values = phi * fit.theta * psi.transpose();
  return surface;
}

PredictionResult predict_response(const GmtFit& fit, const ScoreSet& scores,
                                  const ReducedRankModel& model_y,
                                  const Eigen::VectorXd& t_grid,
                                  const LongitudinalSample& observed_y) {
  if (fit.theta.rows() != scores.p() || fit.theta.cols() != model_y.rank())
    throw std::invalid_argument("predict_response: dimension mismatch");
  const int n = scores.n();

  PredictionResult result;
  result.ids = scores.ids;
  result.t_grid = t_grid;
  const Eigen::VectorXd mu = model_y.mean_on(t_grid);
  const Eigen::MatrixXd psi = model_y.components_on(t_grid);  // len x q
  result.curves.resize(n, t_grid.size());
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd vhat = fit.theta.transpose() * scores.U.row(i).transpose();
    result.curves.row(i) = (mu + psi * vhat).transpose();
  }

  std::unordered_map<std::string, const Curve*> by_id;
  for (const auto& c : observed_y.curves) by_id[c.id] = &c;
  result.per_curve_mse.resize(n);
  for (int i = 0; i < n; ++i) {
    auto it = by_id.find(scores.ids[i]);
    if (it == by_id.end())
      throw DataError("predict_response: curve '" + scores.ids[i] +
                      "' missing from the observed sample");
    const Curve& c = *it->second;
    const Eigen::VectorXd vhat = fit.theta.transpose() * scores.U.row(i).transpose();
    const Eigen::MatrixXd B = model_y.basis.evaluate(c.times);
    const Eigen::VectorXd yhat = B * (model_y.xi + model_y.H * vhat);
    double sq = 0.0;
    for (std::size_t j = 0; j < c.values.size(); ++j) {
      const double d = c.values[j] - yhat[static_cast<int>(j)];
      sq += d * d;
    }
    result.per_curve_mse[i] = sq / static_cast<double>(c.values.size());
  }

  std::vector<double> mse(result.per_curve_mse.data(), result.per_curve_mse.data() + n);
  std::sort(mse.begin(), mse.end());
  const double median =
      n % 2 == 1 ? mse[n / 2] : 0.5 * (mse[n / 2 - 1] + mse[n / 2]);
  result.root_median_squared_error = std::sqrt(median);
  return result;
}

}  // namespace funreg
