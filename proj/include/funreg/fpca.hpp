#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "funreg/bspline.hpp"
#include "funreg/longitudinal.hpp"

namespace funreg {

struct FitOptions {
  double tol = 1e-8;     // relative log-likelihood change
  int max_iter = 500;
  double ridge = 1e-8;   // relative ridge used by the deterministic initializer
};

// Reduced-rank functional PCA model in a spline basis:
//
//   x_i = B_i xi + B_i H Lambda^{1/2} z_i + sigma eps_i,
//
// with (z_i, eps_i) jointly standard multivariate t with nu degrees of
// freedom (nu = +inf gives the Normal model).  Columns of H are orthonormal
// in the Gram metric J, so the component functions phi_k(s) = b(s)' h_k are
// orthonormal in L2[a, b]; lambda is nonincreasing.  Each component's sign is
// fixed so that its integral over the domain is >= 0 (ties broken by the
// sign at the left endpoint).
struct ReducedRankModel {
  SplineBasis basis;
  Eigen::VectorXd xi;       // N
  Eigen::MatrixXd H;        // N x p
  Eigen::VectorXd lambda;   // p, positive nonincreasing
  double sigma = 0.0;       // noise SD
  double nu = std::numeric_limits<double>::infinity();

  bool converged = true;
  int n_iter = 0;
  std::vector<double> loglik_trace;
  std::vector<std::string> warnings;

  int rank() const { return static_cast<int>(lambda.size()); }

  double mean_at(double s) const;
  Eigen::VectorXd components_at(double s) const;           // (phi_1(s),...,phi_p(s))
  Eigen::VectorXd mean_on(const Eigen::VectorXd& grid) const;
  Eigen::MatrixXd components_on(const Eigen::VectorXd& grid) const;  // len x p
};

// Predicted component scores for paired samples, plus the squared
// Mahalanobis distances D2_i = sum_k U_ik^2 / lambda_k computed from the
// X-side scores.
struct ScoreSet {
  std::vector<std::string> ids;
  Eigen::MatrixXd U;        // n x p
  Eigen::MatrixXd V;        // n x q
  Eigen::VectorXd D2;       // n
  Eigen::VectorXd lambda_x; // p, the variances used for D2

  int n() const { return static_cast<int>(U.rows()); }
  int p() const { return static_cast<int>(U.cols()); }
  int q() const { return static_cast<int>(V.cols()); }
};

// Maximum likelihood fit by EM.  The observed-data log-likelihood is
// nondecreasing across iterations; non-convergence within max_iter sets
// converged = false and a warning instead of failing.  Throws
// std::invalid_argument if the data cannot identify the requested rank
// (fewer than N*(1+p) observations in total) and NumericalError if the
// M-step system is singular (rank too large for the design).
ReducedRankModel fit_reduced_rank(const LongitudinalSample& sample, const SplineBasis& basis,
                                  int p, double nu, const FitOptions& options = {});

// Robust fitting pipeline: fit, flag curves whose fitted score distance
// exceeds chi^2_{p, 1 - reject_alpha} as outlying trajectories, and refit on
// the remaining curves (one pass).  Falls back to the single fit when the
// refit would lose more than half the sample or becomes infeasible.
// reject_alpha <= 0 disables the pass.  Scores for the flagged curves are
// still obtained through predict_scores under the returned model.
ReducedRankModel fit_reduced_rank_with_rejection(const LongitudinalSample& sample,
                                                 const SplineBasis& basis, int p, double nu,
                                                 double reject_alpha = 0.01,
                                                 const FitOptions& options = {});

// Posterior-mean scores under the fitted models: U_i = Lambda^{1/2} E[z_i|x_i].
// Samples are matched by curve id (the X sample's order is kept); throws
// DataError when the id sets differ.
ScoreSet predict_scores(const ReducedRankModel& model_x, const ReducedRankModel& model_y,
                        const LongitudinalSample& sample_x, const LongitudinalSample& sample_y);

enum class RankCriterion { Aic, Bic };

struct RankSelection {
  int best_p = 0;
  std::vector<double> criterion;                       // per p = 1..p_max; NaN if failed
  std::vector<std::vector<double>> explained_variance; // per p, fractions lambda_k / sum
  std::vector<bool> fit_ok;
};

RankSelection select_rank(const LongitudinalSample& sample, const SplineBasis& basis, int p_max,
                          double nu, RankCriterion criterion, const FitOptions& options = {});

}  // namespace funreg
