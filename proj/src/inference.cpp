#include "funreg/inference.hpp"

#include <cmath>
#include <optional>

#include "funreg/errors.hpp"
#include "funreg/parallel.hpp"
#include "funreg/rng.hpp"
#include "funreg/stats.hpp"

namespace funreg {

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

SandwichEstimate sandwich(const GmtFit& fit, const ScoreSet& scores, const GmtConfig& config) {
  const int n = scores.n();
  const int p = scores.p();
  const int q = scores.q();
  const Eigen::LLT<Eigen::MatrixXd> sigma_llt(fit.sigma);
  if (sigma_llt.info() != Eigen::Success)
    throw NumericalError("sandwich: scatter matrix not positive definite");

  Eigen::MatrixXd A_curv = Eigen::MatrixXd::Zero(p * q, p * q);
  Eigen::MatrixXd SwU = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p * q, p * q);
  for (int i = 0; i < n; ++i) {
    const double w = fit.weights[i];
    if (w == 0.0) continue;
    const double e = fit.e[i];
    const double rp = rho_prime_value(e, config, q);
    const double rs = rho_second_value(e, config, q);
    const Eigen::VectorXd u = scores.U.row(i).transpose();
    const Eigen::VectorXd r = fit.residuals.row(i).transpose();
    const Eigen::MatrixXd uu = u * u.transpose();
    const Eigen::MatrixXd rr = r * r.transpose();
    A_curv.noalias() += 2.0 * rs * w * w * kronecker(sigma_llt.solve(rr), uu);
    SwU.noalias() += rp * w * uu;
    B.noalias() += rp * rp * w * w * kronecker(rr, uu);
  }
  SandwichEstimate est;
  est.n = n;
  Eigen::MatrixXd A_raw =
      A_curv / n + kronecker(Eigen::MatrixXd::Identity(q, q), SwU / n);
  est.asymmetry = (A_raw - A_raw.transpose()).cwiseAbs().maxCoeff();
  est.A = 0.5 * (A_raw + A_raw.transpose());
  est.B = B / n;

  Eigen::LDLT<Eigen::MatrixXd> a_ldlt(est.A);
  const Eigen::VectorXd D = a_ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  if (!(dmax > 0.0) || D.cwiseAbs().minCoeff() <= 1e-12 * dmax)
    throw NumericalError("sandwich: A is singular; use the bootstrap covariance instead");
  est.Omega = a_ldlt.solve(a_ldlt.solve(est.B).transpose());
  est.Omega = 0.5 * (est.Omega + est.Omega.transpose()).eval();
  return est;
}

SandwichEstimate ls_covariance(const GmtFit& fit, const ScoreSet& scores) {
  const int n = scores.n();
  const int p = scores.p();
  const int q = scores.q();
  const Eigen::MatrixXd SU = scores.U.transpose() * scores.U / n;
  const Eigen::MatrixXd SR = fit.residuals.transpose() * fit.residuals / n;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(SU);
  const Eigen::VectorXd D = ldlt.vectorD();
  const double dmax = D.maxCoeff();
  if (!(dmax > 0.0) || D.minCoeff() <= 1e-12 * dmax)
    throw NumericalError("ls_covariance: singular score covariance");
  SandwichEstimate est;
  est.n = n;
  est.Omega = kronecker(SR, ldlt.solve(Eigen::MatrixXd::Identity(p, p)));
  est.A = Eigen::MatrixXd::Identity(p * q, p * q);
  est.B = est.Omega;
  est.asymmetry = 0.0;
  return est;
}

TestResult wald_test(const GmtFit& fit, const SandwichEstimate& sandwich) {
  TestResult result;
  result.method = TestMethod::WaldSandwich;
  result.df = static_cast<int>(fit.theta.size());
  const Eigen::Map<const Eigen::VectorXd> theta_vec(fit.theta.data(), fit.theta.size());
  if (theta_vec.isZero(0.0)) {
    result.Q = 0.0;
    result.p_value = 1.0;
    return result;
  }
  Eigen::LDLT<Eigen::MatrixXd> b_ldlt(sandwich.B);
  const Eigen::VectorXd D = b_ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  if (!(dmax > 0.0) || D.cwiseAbs().minCoeff() <= 1e-12 * dmax)
    throw NumericalError("wald_test: B is singular");
  const Eigen::VectorXd a_theta = sandwich.A * theta_vec;
  result.Q = std::max(0.0, sandwich.n * a_theta.dot(b_ldlt.solve(a_theta)));
  result.p_value = 1.0 - chi2_cdf(result.Q, result.df);
  return result;
}

namespace {

ScoreSet resample_scores(const ScoreSet& scores, const std::vector<int>& idx) {
  ScoreSet out;
  out.U.resize(static_cast<int>(idx.size()), scores.p());
  out.V.resize(static_cast<int>(idx.size()), scores.q());
  out.D2.resize(static_cast<int>(idx.size()));
  out.lambda_x = scores.lambda_x;
  out.ids.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.U.row(static_cast<int>(r)) = scores.U.row(idx[r]);
    out.V.row(static_cast<int>(r)) = scores.V.row(idx[r]);
    out.D2[static_cast<int>(r)] = scores.D2[idx[r]];
    out.ids.push_back(scores.ids.empty() ? std::string() : scores.ids[idx[r]]);
  }
  return out;
}

}  // namespace

BootstrapResult bootstrap_covariance(const ScoreSet& scores, const GmtConfig& config,
                                     int n_boot, std::uint64_t seed, int n_threads) {
  if (n_boot < 50) throw std::invalid_argument("bootstrap_covariance: n_boot must be >= 50");
  const int n = scores.n();
  const GmtFit fit_obs = gmt_fit(scores, config);

  std::vector<std::optional<Eigen::VectorXd>> draws(n_boot);
  parallel_for(n_boot, n_threads, [&](int r) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(r));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = static_cast<int>(rng.uniform_below(n));
    try {
      const ScoreSet rs = resample_scores(scores, idx);
      const GmtFit fit = gmt_fit(rs, config);
      draws[r] = Eigen::Map<const Eigen::VectorXd>(fit.theta.data(), fit.theta.size());
    } catch (const std::exception&) {
      // dropped and counted
    }
  });

  std::vector<Eigen::VectorXd> ok;
  ok.reserve(n_boot);
  for (const auto& d : draws)
    if (d) ok.push_back(*d);
  const int n_failed = n_boot - static_cast<int>(ok.size());
  if (n_failed > n_boot / 5)
    throw NumericalError("bootstrap_covariance: more than 20% of replicates failed (" +
                         std::to_string(n_failed) + "/" + std::to_string(n_boot) + ")");
  if (ok.size() < 2) throw NumericalError("bootstrap_covariance: too few successful replicates");

  const int d = static_cast<int>(ok.front().size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : ok) mean += v;
  mean /= static_cast<double>(ok.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& v : ok) {
    const Eigen::VectorXd c = v - mean;
    cov.noalias() += c * c.transpose();
  }
  cov *= static_cast<double>(n) / static_cast<double>(ok.size() - 1);

  BootstrapResult result;
  result.n_failed = n_failed;
  result.omega.A = Eigen::MatrixXd::Identity(d, d);
  result.omega.B = cov;
  result.omega.Omega = cov;
  result.omega.n = n;

  result.test.method = TestMethod::WaldBootstrap;
  result.test.df = d;
  result.test.n_resamples = n_boot;
  result.test.n_failed = n_failed;
  const Eigen::Map<const Eigen::VectorXd> theta_vec(fit_obs.theta.data(), fit_obs.theta.size());
  if (theta_vec.isZero(0.0)) {
    result.test.Q = 0.0;
    result.test.p_value = 1.0;
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    const Eigen::VectorXd D = ldlt.vectorD();
    const double dmax = D.cwiseAbs().maxCoeff();
    if (!(dmax > 0.0) || D.cwiseAbs().minCoeff() <= 1e-12 * dmax)
      throw NumericalError("bootstrap_covariance: singular bootstrap covariance");
    result.test.Q = std::max(0.0, n * theta_vec.dot(ldlt.solve(theta_vec)));
    result.test.p_value = 1.0 - chi2_cdf(result.test.Q, result.test.df);
  }
  return result;
}

TestResult permutation_test(const ScoreSet& scores, const GmtConfig& config, int n_perm,
                            std::uint64_t seed, int n_threads) {
  if (n_perm < 99) throw std::invalid_argument("permutation_test: n_perm must be >= 99");
  const int n = scores.n();

  const GmtFit fit_obs = gmt_fit(scores, config);
  const double q_obs = wald_test(fit_obs, sandwich(fit_obs, scores, config)).Q;

  std::vector<std::optional<double>> stats(n_perm);
  parallel_for(n_perm, n_threads, [&](int r) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(r));
    const std::vector<int> pi = rng.permutation(n);
    try {
      ScoreSet perm = scores;
      for (int i = 0; i < n; ++i) perm.V.row(i) = scores.V.row(pi[i]);
      const GmtFit fit = gmt_fit(perm, config);
      stats[r] = wald_test(fit, sandwich(fit, perm, config)).Q;
    } catch (const std::exception&) {
      // dropped and counted
    }
  });

  int n_failed = 0;
  int n_geq = 0;
  int n_ok = 0;
  for (const auto& s : stats) {
    if (!s) {
      ++n_failed;
      continue;
    }
    ++n_ok;
    if (*s >= q_obs) ++n_geq;
  }
  if (n_failed > n_perm / 5)
    throw NumericalError("permutation_test: more than 20% of replicates failed (" +
                         std::to_string(n_failed) + "/" + std::to_string(n_perm) + ")");

  TestResult result;
  result.method = TestMethod::Permutation;
  result.df = static_cast<int>(fit_obs.theta.size());
  result.Q = q_obs;
  result.n_resamples = n_perm;
  result.n_failed = n_failed;
  result.p_value = (1.0 + n_geq) / (n_ok + 1.0);
  return result;
}

Eigen::VectorXd theta_gradient(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& sigma,
                               const Eigen::VectorXd& u, const Eigen::VectorXd& v, double w,
                               const GmtConfig& config) {
  const int q = static_cast<int>(v.size());
  const Eigen::VectorXd r = v - theta.transpose() * u;
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const Eigen::VectorXd sr = llt.solve(r);
  const double e = w * r.dot(sr);
  const Eigen::MatrixXd M = -2.0 * rho_prime_value(e, config, q) * w * u * sr.transpose();
  return Eigen::Map<const Eigen::VectorXd>(M.data(), M.size());
}

Eigen::VectorXd estimating_function(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& sigma,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& v, double w,
                                    const GmtConfig& config) {
  const int q = static_cast<int>(v.size());
  const Eigen::VectorXd r = v - theta.transpose() * u;
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const double e = w * r.dot(llt.solve(r));
  const Eigen::MatrixXd M = -rho_prime_value(e, config, q) * w * u * r.transpose();
  return Eigen::Map<const Eigen::VectorXd>(M.data(), M.size());
}

Eigen::MatrixXd estimating_function_jacobian(const Eigen::MatrixXd& theta,
                                             const Eigen::MatrixXd& sigma,
                                             const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                             double w, const GmtConfig& config) {
  const int q = static_cast<int>(v.size());
  const Eigen::VectorXd r = v - theta.transpose() * u;
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const Eigen::VectorXd sr = llt.solve(r);
  const double e = w * r.dot(sr);
  const Eigen::MatrixXd uu = u * u.transpose();
  return 2.0 * rho_second_value(e, config, q) * w * w *
             kronecker(sr * r.transpose(), uu) +
         rho_prime_value(e, config, q) * w *
             kronecker(Eigen::MatrixXd::Identity(q, q), uu);
}

}  // namespace funreg
