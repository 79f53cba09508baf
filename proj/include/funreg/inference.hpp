#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "funreg/gmt.hpp"

namespace funreg {

// M-estimation asymptotics for vec(theta):
// sqrt(n) (vec(theta_hat) - vec(theta_0)) ~ N(0, A^{-1} B A^{-1}) with
//   A = 2 E{rho''(e) w^2 (Sigma^{-1} R R') x (U U')} + I_q x E{rho'(e) w U U'},
//   B = E{(rho'(e))^2 w^2 (R R') x (U U')},
// expectations replaced by sample averages at the fitted (theta, sigma).
// A is symmetrized before inversion; the pre-symmetrization asymmetry is
// recorded.  vec() stacks columns of the p x q coefficient matrix, so the
// Kronecker factors are q x q (x) p x p.
struct SandwichEstimate {
  Eigen::MatrixXd A;      // pq x pq
  Eigen::MatrixXd B;      // pq x pq
  Eigen::MatrixXd Omega;  // A^{-1} B A^{-1}
  int n = 0;
  double asymmetry = 0.0;  // max-norm of A - A' before symmetrization
};

SandwichEstimate sandwich(const GmtFit& fit, const ScoreSet& scores, const GmtConfig& config);

// Covariance used with the plain least-squares estimator:
// Omega = (1/n sum R R') (x) (1/n sum U U')^{-1}, packaged with A = I so
// wald_test applies unchanged.
SandwichEstimate ls_covariance(const GmtFit& fit, const ScoreSet& scores);

enum class TestMethod { WaldSandwich, WaldBootstrap, Permutation };

struct TestResult {
  double Q = 0.0;
  int df = 0;
  double p_value = 1.0;
  TestMethod method = TestMethod::WaldSandwich;
  int n_resamples = 0;
  int n_failed = 0;
};

// Q = n vec(theta)' A B^{-1} A vec(theta), compared against chi^2 with
// pq degrees of freedom.
TestResult wald_test(const GmtFit& fit, const SandwichEstimate& sandwich);

struct BootstrapResult {
  SandwichEstimate omega;  // A = I, B = Omega = n cov(vec(theta*))
  TestResult test;
  int n_failed = 0;
};

// Pairs bootstrap: resamples (U_i, V_i, D2_i) rows with replacement,
// recomputes the trimming weights on each resample, refits, and sets
// Omega = n cov(vec(theta*)) over the successful replicates.  Deterministic
// given the seed (replicate r uses Rng::substream(seed, r)); errors out when
// more than 20% of the replicates fail.
BootstrapResult bootstrap_covariance(const ScoreSet& scores, const GmtConfig& config,
                                     int n_boot, std::uint64_t seed, int n_threads = 1);

// Permutation test of no regression: V rows are permuted against U rows
// (weights stay attached to U), each permutation is refitted and gets its
// own sandwich statistic; p = (1 + #{Q* >= Q_obs}) / (n_perm + 1).
TestResult permutation_test(const ScoreSet& scores, const GmtConfig& config, int n_perm,
                            std::uint64_t seed, int n_threads = 1);

// Per-observation pieces of the estimating equations, exposed for the
// derivative checks in the test suite.  theta_gradient is the gradient of
// rho(w r' Sigma^{-1} r) + log|Sigma| in vec(theta); estimating_function is
// the same with the -2 Sigma^{-1} factor removed; the Jacobian expression
// below is the per-observation integrand of A.
Eigen::VectorXd theta_gradient(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& sigma,
                               const Eigen::VectorXd& u, const Eigen::VectorXd& v, double w,
                               const GmtConfig& config);
Eigen::VectorXd estimating_function(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& sigma,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& v, double w,
                                    const GmtConfig& config);
Eigen::MatrixXd estimating_function_jacobian(const Eigen::MatrixXd& theta,
                                             const Eigen::MatrixXd& sigma,
                                             const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                             double w, const GmtConfig& config);

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

}  // namespace funreg
