#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "funreg/fpca.hpp"

namespace funreg {

// Hard 0/1 score weights: metric trimming cuts at the chi-square quantile of
// D2, rank trimming removes a fixed fraction, unit keeps everything.
enum class TrimKind { Metric, Rank, Unit };

struct WeightScheme {
  TrimKind kind = TrimKind::Unit;
  double alpha = 0.0;  // trimming proportion in [0, 1)
};

// Loss family for the regression objective.  Linear (rho(x) = x) exists only
// as a test hook that collapses the estimator to least squares; it is not a
// user-facing choice.
enum class RhoFamily { TType, Linear };

struct GmtConfig {
  double nu_rho = 5.0;
  WeightScheme weights;
  double tol = 1e-10;
  int max_iter = 500;
  RhoFamily family = RhoFamily::TType;
};

// rho(x) = (nu + q) log(1 + x / nu) and its first two derivatives.
double rho(double x, double nu, int q);
double rho_prime(double x, double nu, int q);
double rho_second(double x, double nu, int q);

// Derivative access that honours the Linear test hook.
double rho_value(double x, const GmtConfig& config, int q);
double rho_prime_value(double x, const GmtConfig& config, int q);
double rho_second_value(double x, const GmtConfig& config, int q);

// w_i = 1 iff D2_i <= chi^2_{p, 1 - alpha}; alpha = 0 keeps everything.
Eigen::VectorXd metric_weights(const ScoreSet& scores, double alpha);

// Exactly ceil(alpha * n) observations with the largest D2 get weight 0;
// ties are broken by trimming the higher index first.
Eigen::VectorXd rank_weights(const ScoreSet& scores, double alpha);

Eigen::VectorXd make_weights(const ScoreSet& scores, const WeightScheme& scheme);

// Empirical quantiles of the D2 distribution, for choosing alpha.
std::vector<double> d2_quantiles(const ScoreSet& scores, const std::vector<double>& probs);

struct GmtFit {
  Eigen::MatrixXd theta;      // p x q
  Eigen::MatrixXd sigma;      // q x q, symmetric positive definite
  Eigen::VectorXd weights;    // n, in {0, 1}
  Eigen::VectorXd e;          // n, scaled residual distances w_i R_i' Sigma^{-1} R_i
  Eigen::MatrixXd residuals;  // n x q, rows V_i - theta' U_i
  int n_trimmed = 0;
  bool converged = true;
  int n_iter = 0;
  std::vector<double> objective_trace;  // nonincreasing within float slack
  bool sigma_regularized = false;
};

// Ordinary least squares on the scores; all weights 1, empty trace.
// Throws NumericalError when the score covariance is singular.
GmtFit least_squares(const ScoreSet& scores);

// Robust fit: minimizes sum_i rho(w_i R_i' Sigma^{-1} R_i) + n log|Sigma|
// by alternating the two reweighted update maps
//
//   theta <- (sum c_i U_i U_i')^{-1} sum c_i U_i V_i',  c_i = rho'(e_i) w_i,
//   sigma <- (1/n) sum c_i R_i R_i',
//
// with e_i recomputed each pass.  Iteration stops when one further
// application of both maps moves (theta, sigma) by less than tol in
// max-norm, so the returned fit satisfies the fixed-point equations to
// within tol.  Observations with w_i = 0 contribute rho(0) = 0 and drop out
// of both sums.  Starts from least squares on the untrimmed observations.
GmtFit gmt_fit(const ScoreSet& scores, const GmtConfig& config);

// Same, with an externally supplied weight vector.
GmtFit gmt_fit_with_weights(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                            const Eigen::VectorXd& weights, const GmtConfig& config);

// Evaluation of the objective at an arbitrary point (used by the fitter and
// by derivative checks in the tests).
double gmt_objective(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                     const Eigen::VectorXd& weights, const Eigen::MatrixXd& theta,
                     const Eigen::MatrixXd& sigma, const GmtConfig& config);

// beta(s, t) = phi(s)' theta psi(t) tabulated on a rectangular grid.
struct SlopeSurface {
  Eigen::VectorXd s_grid;
  Eigen::VectorXd t_grid;
  Eigen::MatrixXd values;  // len(s_grid) x len(t_grid)
  Eigen::MatrixXd theta;
};

SlopeSurface slope_surface(const GmtFit& fit, const ReducedRankModel& model_x,
                           const ReducedRankModel& model_y, const Eigen::VectorXd& s_grid,
                           const Eigen::VectorXd& t_grid);

// Predicted response trajectories Yhat_i(t) = mu_Y(t) + psi(t)' theta' U_i,
// with per-curve mean squared residuals against the observed y_ij and their
// root median.
struct PredictionResult {
  std::vector<std::string> ids;
  Eigen::VectorXd t_grid;
  Eigen::MatrixXd curves;  // n x len(t_grid)
  Eigen::VectorXd per_curve_mse;
  double root_median_squared_error = 0.0;
};

PredictionResult predict_response(const GmtFit& fit, const ScoreSet& scores,
                                  const ReducedRankModel& model_y,
                                  const Eigen::VectorXd& t_grid,
                                  const LongitudinalSample& observed_y);

}  // namespace funreg
