#include "funreg/fpca.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "funreg/errors.hpp"
#include "funreg/stats.hpp"

namespace funreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Above this df the t model is numerically Gaussian: the robust initializer
// and the Gaussian-consistency calibration are pointless there and would
// only add median-sampling jitter, so those code paths follow the Normal
// branch while the EM itself still uses the exact t likelihood.
inline bool effectively_normal(double nu) { return std::isinf(nu) || nu > 1e6; }

struct CurveBlocks {
  Eigen::MatrixXd B;   // m x N
  Eigen::MatrixXd K;   // N x N, B'B
  Eigen::VectorXd bx;  // N, B'x
  double xx = 0.0;     // x'x
  int m = 0;
};

std::vector<CurveBlocks> precompute_blocks(const LongitudinalSample& sample,
                                           const SplineBasis& basis) {
  std::vector<CurveBlocks> blocks;
  blocks.reserve(sample.curves.size());
  for (const auto& c : sample.curves) {
    for (double t : c.times)
      if (t < basis.a() || t > basis.b())
        throw DataError("curve '" + c.id + "': time outside the basis domain");
    CurveBlocks blk;
    blk.B = basis.evaluate(c.times);
    blk.K = blk.B.transpose() * blk.B;
    const Eigen::Map<const Eigen::VectorXd> x(c.values.data(),
                                              static_cast<int>(c.values.size()));
    blk.bx = blk.B.transpose() * x;
    blk.xx = x.squaredNorm();
    blk.m = static_cast<int>(c.times.size());
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

// Posterior moments of one curve under parameters (xi, A, sigma2).  All
// m x m algebra is reduced to the p x p matrix G = A'KA + sigma2 I via the
// Woodbury identity: zhat = G^{-1} A'(bx - K xi), Cov(z|x,u=1) = sigma2 G^{-1},
// delta = (r'r - (A'r_b)' G^{-1} (A'r_b)) / sigma2, log|Sigma| =
// (m - p) log sigma2 + log|G|.
struct Posterior {
  Eigen::VectorXd zhat;
  Eigen::MatrixXd S;
  double delta = 0.0;
  double logdet = 0.0;
  double a = 1.0;  // E[u | x]; 1 for the Normal model
};

Posterior curve_posterior(const CurveBlocks& blk, const Eigen::VectorXd& xi,
                          const Eigen::MatrixXd& A, double sigma2, double nu) {
  const int p = static_cast<int>(A.cols());
  Eigen::MatrixXd G = A.transpose() * blk.K * A;
  G.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw NumericalError("fit_reduced_rank: degenerate posterior system");
  Eigen::VectorXd cr = A.transpose() * (blk.bx - blk.K * xi);
  Posterior post;
  post.zhat = llt.solve(cr);
  post.S = sigma2 * llt.solve(Eigen::MatrixXd::Identity(p, p));
  const double rr = blk.xx - 2.0 * xi.dot(blk.bx) + xi.dot(blk.K * xi);
  post.delta = std::max(0.0, (rr - cr.dot(post.zhat)) / sigma2);
  double logdetG = 0.0;
  for (int k = 0; k < p; ++k) logdetG += 2.0 * std::log(llt.matrixL()(k, k));
  post.logdet = (blk.m - p) * std::log(sigma2) + logdetG;
  post.a = std::isinf(nu) ? 1.0 : (nu + blk.m) / (nu + post.delta);
  return post;
}

double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  std::nth_element(values.begin(), values.begin() + n / 2, values.end());
  double med = values[n / 2];
  if (n % 2 == 0) {
    std::nth_element(values.begin(), values.begin() + n / 2 - 1, values.end());
    med = 0.5 * (values[n / 2 - 1] + med);
  }
  return med;
}

double curve_loglik(const Posterior& post, int m, double nu) {
  if (std::isinf(nu))
    return -0.5 * m * std::log(2.0 * std::numbers::pi) - 0.5 * post.logdet -
           0.5 * post.delta;
  return std::lgamma(0.5 * (nu + m)) - std::lgamma(0.5 * nu) -
         0.5 * m * std::log(nu * std::numbers::pi) - 0.5 * post.logdet -
         0.5 * (nu + m) * std::log1p(post.delta / nu);
}

}  // namespace

double ReducedRankModel::mean_at(double s) const { return basis.evaluate(s).dot(xi); }

Eigen::VectorXd ReducedRankModel::components_at(double s) const {
  return H.transpose() * basis.evaluate(s);
}

Eigen::VectorXd ReducedRankModel::mean_on(const Eigen::VectorXd& grid) const {
  return basis.evaluate(grid) * xi;
}

Eigen::MatrixXd ReducedRankModel::components_on(const Eigen::VectorXd& grid) const {
  return basis.evaluate(grid) * H;
}

ReducedRankModel fit_reduced_rank(const LongitudinalSample& sample, const SplineBasis& basis,
                                  int p, double nu, const FitOptions& options) {
  sample.validate();
  const int N = basis.size();
  const int n = sample.n_curves();
  if (p < 1) throw std::invalid_argument("fit_reduced_rank: rank must be >= 1");
  if (p > N) throw std::invalid_argument("fit_reduced_rank: rank exceeds basis dimension");
  if (!(nu > 0.0)) throw std::invalid_argument("fit_reduced_rank: nu must be positive");
  if (n < 2) throw std::invalid_argument("fit_reduced_rank: insufficient data (need >= 2 curves)");
  const long total = sample.total_observations();
  if (total < static_cast<long>(N) * (1 + p))
    throw std::invalid_argument("fit_reduced_rank: insufficient data (" + std::to_string(total) +
                                " observations < " + std::to_string(N * (1 + p)) +
                                " required for rank " + std::to_string(p) + ")");

  const auto blocks = precompute_blocks(sample, basis);
  const Eigen::MatrixXd J = basis.gram();
  const Eigen::LLT<Eigen::MatrixXd> gram_llt(J);

  double data_msq = 0.0;
  for (const auto& blk : blocks) data_msq += blk.xx;
  data_msq = data_msq / static_cast<double>(total) + 1e-30;
  const double sigma2_floor = 1e-12 * data_msq;

  // ---- deterministic initialization -------------------------------------
  // Per-curve ridge projections onto the spline space.
  std::vector<Eigen::VectorXd> coefs(n);
  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd Ki = blocks[i].K;
    Ki.diagonal().array() += 1e-6 * blocks[i].K.trace() / N + 1e-300;
    coefs[i] = Ki.ldlt().solve(blocks[i].bx);
    rss += std::max(0.0, blocks[i].xx - 2.0 * coefs[i].dot(blocks[i].bx) +
                             coefs[i].dot(blocks[i].K * coefs[i]));
  }
  double sigma2 = std::max(rss / static_cast<double>(total), sigma2_floor);

  Eigen::VectorXd xi(N);
  Eigen::MatrixXd coef_cov = Eigen::MatrixXd::Zero(N, N);
  if (effectively_normal(nu)) {
    // Normal model: pooled ridge least squares and the plain coefficient
    // covariance.
    Eigen::MatrixXd Ksum = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd bxsum = Eigen::VectorXd::Zero(N);
    for (const auto& blk : blocks) {
      Ksum += blk.K;
      bxsum += blk.bx;
    }
    Eigen::MatrixXd Kreg = Ksum;
    Kreg.diagonal().array() += options.ridge * Ksum.trace() / N + 1e-300;
    xi = Kreg.ldlt().solve(bxsum);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd d = coefs[i] - xi;
      coef_cov += d * d.transpose();
    }
    coef_cov /= n;
  } else {
    // t model: the likelihood is multimodal under leverage contamination and
    // EM converges within the basin it starts in, so the start must already
    // resist outliers: coordinatewise-median center and a 25%-trimmed
    // coefficient covariance (trimming by the J-metric distance).
    for (int j = 0; j < N; ++j) {
      std::vector<double> column(n);
      for (int i = 0; i < n; ++i) column[i] = coefs[i][j];
      xi[j] = median_of(column);
    }
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd d = coefs[i] - xi;
      dist[i] = {d.dot(J * d), i};
    }
    std::sort(dist.begin(), dist.end());
    const int keep = n - static_cast<int>(std::floor(0.25 * n));
    for (int r = 0; r < keep; ++r) {
      const Eigen::VectorXd d = coefs[dist[r].second] - xi;
      coef_cov += d * d.transpose();
    }
    coef_cov /= keep;
  }

  Eigen::MatrixXd T = gram_llt.matrixL().transpose() * coef_cov * gram_llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (T + T.transpose()));
  Eigen::MatrixXd A(N, p);
  {
    Eigen::MatrixXd top(N, p);
    Eigen::VectorXd lam0(p);
    const double dmax = std::max(eig.eigenvalues().maxCoeff(), 1e-12);
    for (int k = 0; k < p; ++k) {
      top.col(k) = eig.eigenvectors().col(N - 1 - k);  // eigenvalues ascend in Eigen
      lam0[k] = std::max(eig.eigenvalues()[N - 1 - k], 1e-8 * dmax);
    }
    Eigen::MatrixXd H0 =
        gram_llt.matrixL().transpose().solve(top);
    A = H0 * lam0.cwiseSqrt().asDiagonal();
  }

  // ---- EM ----------------------------------------------------------------
  ReducedRankModel model{basis};
  std::vector<double>& trace = model.loglik_trace;
  const int np = 1 + p;
  Eigen::MatrixXd M(np * N, np * N);
  Eigen::MatrixXd rhs(N, np);
  Eigen::MatrixXd Phi(N, np);
  double ll_prev = -kInf;
  bool converged = false;
  int iter = 0;

  for (iter = 0; iter < options.max_iter; ++iter) {
    M.setZero();
    rhs.setZero();
    double ll = 0.0;
    std::vector<Posterior> posts(n);
    for (int i = 0; i < n; ++i) {
      posts[i] = curve_posterior(blocks[i], xi, A, sigma2, nu);
      ll += curve_loglik(posts[i], blocks[i].m, nu);
    }
    trace.push_back(ll);
    if (iter > 0 && std::abs(ll - ll_prev) / (1.0 + std::abs(ll)) < options.tol) {
      converged = true;
      break;
    }
    ll_prev = ll;

    Eigen::MatrixXd W(np, np);
    Eigen::VectorXd ug(np);
    for (int i = 0; i < n; ++i) {
      const Posterior& post = posts[i];
      W(0, 0) = post.a;
      W.block(0, 1, 1, p) = post.a * post.zhat.transpose();
      W.block(1, 0, p, 1) = post.a * post.zhat;
      W.block(1, 1, p, p) = post.a * post.zhat * post.zhat.transpose() + post.S;
      ug[0] = post.a;
      ug.tail(p) = post.a * post.zhat;
      for (int r = 0; r < np; ++r)
        for (int c = 0; c < np; ++c) M.block(r * N, c * N, N, N) += W(r, c) * blocks[i].K;
      rhs += blocks[i].bx * ug.transpose();
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (M + M.transpose()));
    const Eigen::VectorXd D = ldlt.vectorD();
    const double dmax = D.maxCoeff();
    if (!(dmax > 0.0) || D.minCoeff() <= 1e-12 * dmax)
      throw NumericalError(
          "fit_reduced_rank: singular M-step system (rank too large for the data)");
    Eigen::Map<Eigen::VectorXd> rhs_vec(rhs.data(), np * N);
    Eigen::VectorXd phi_vec = ldlt.solve(rhs_vec);
    Phi = Eigen::Map<Eigen::MatrixXd>(phi_vec.data(), N, np);

    double ss = 0.0;
    long mtotal = 0;
    for (int i = 0; i < n; ++i) {
      const Posterior& post = posts[i];
      W(0, 0) = post.a;
      W.block(0, 1, 1, p) = post.a * post.zhat.transpose();
      W.block(1, 0, p, 1) = post.a * post.zhat;
      W.block(1, 1, p, p) = post.a * post.zhat * post.zhat.transpose() + post.S;
      ug[0] = post.a;
      ug.tail(p) = post.a * post.zhat;
      Eigen::MatrixXd PKP = Phi.transpose() * blocks[i].K * Phi;
      ss += post.a * blocks[i].xx - 2.0 * ug.dot(Phi.transpose() * blocks[i].bx) +
            (PKP * W).trace();
      mtotal += blocks[i].m;
    }
    xi = Phi.col(0);
    A = Phi.rightCols(p);
    sigma2 = std::max(ss / static_cast<double>(mtotal), sigma2_floor);
  }

  model.n_iter = iter;
  model.converged = converged;
  if (!converged)
    model.warnings.push_back("EM did not converge after " + std::to_string(options.max_iter) +
                             " iterations");
  if (sigma2 <= sigma2_floor * (1.0 + 1e-12))
    model.warnings.push_back("noise variance reached its lower floor (near-noiseless data)");

  // Gaussian-consistency calibration of the t fit.  The t maximum likelihood
  // scatter underestimates the dispersion of clean Gaussian data, which
  // would inflate every D2 and make chi-square trimming cut far more than
  // the nominal fraction.  Two robust median matches fix the scale: first
  // the overall scatter against the chi-square law of the per-curve
  // Mahalanobis distances (noise-dominated), then the score variances
  // against the chi-square law of D2 itself.  Predicted scores are
  // essentially invariant; only the D2 calibration changes.
  if (!effectively_normal(nu) && n > 0) {
    std::vector<double> ratios(n);
    for (int i = 0; i < n; ++i) {
      const Posterior post = curve_posterior(blocks[i], xi, A, sigma2, nu);
      ratios[i] = post.delta / chi2_quantile(0.5, blocks[i].m);
    }
    const double kappa = median_of(ratios);
    if (kappa > 0.0 && std::isfinite(kappa)) {
      A *= std::sqrt(kappa);
      sigma2 *= kappa;
    }

    const double d2_target = chi2_quantile(0.5, p);
    auto median_d2 = [&](double scale) {
      std::vector<double> d2(n);
      for (int i = 0; i < n; ++i) {
        const Posterior post =
            curve_posterior(blocks[i], xi, std::sqrt(scale) * A, sigma2, nu);
        d2[i] = post.zhat.squaredNorm();
      }
      return median_of(d2);
    };
    // median D2 decreases in the score scale over the relevant range
    double lo = 1.0, hi = 1.0;
    if (median_d2(1.0) > d2_target) {
      while (median_d2(hi) > d2_target && hi < 1e8) hi *= 2.0;
    } else {
      while (median_d2(lo) < d2_target && lo > 1e-8) lo *= 0.5;
    }
    if (lo > 1e-8 && hi < 1e8) {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (median_d2(mid) > d2_target)
          lo = mid;
        else
          hi = mid;
      }
      A *= std::sqrt(0.5 * (lo + hi));
    } else {
      model.warnings.push_back("score-scale calibration skipped (degenerate D2)");
    }
  }

  // ---- canonical form: A A' = H Lambda H' with H'JH = I ------------------
  Eigen::MatrixXd Atil = gram_llt.matrixL().transpose() * A;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Atil, Eigen::ComputeThinU);
  Eigen::MatrixXd H =
      gram_llt.matrixL().transpose().solve(svd.matrixU());
  Eigen::VectorXd lambda = svd.singularValues().array().square();

  const double lam_floor = 1e-15 * std::max({lambda.size() > 0 ? lambda[0] : 0.0, sigma2, 1e-30});
  for (int k = 0; k < p; ++k) {
    if (lambda[k] < lam_floor) {
      model.warnings.push_back("component " + std::to_string(k + 1) +
                               " has near-zero variance");
      lambda[k] = lam_floor;
    }
  }

  const Eigen::VectorXd j0 = basis.integrals();
  for (int k = 0; k < p; ++k) {
    const double total_signed = j0.dot(H.col(k));
    const bool flip = total_signed < 0.0 || (total_signed == 0.0 && H(0, k) < 0.0);
    if (flip) H.col(k) = -H.col(k);
  }

  model.xi = xi;
  model.H = H;
  model.lambda = lambda;
  model.sigma = std::sqrt(sigma2);
  model.nu = nu;
  return model;
}

ReducedRankModel fit_reduced_rank_with_rejection(const LongitudinalSample& sample,
                                                 const SplineBasis& basis, int p, double nu,
                                                 double reject_alpha,
                                                 const FitOptions& options) {
  ReducedRankModel model = fit_reduced_rank(sample, basis, p, nu, options);
  if (reject_alpha <= 0.0) return model;

  const double cutoff = chi2_quantile(1.0 - reject_alpha, p);
  const ScoreSet self = predict_scores(model, model, sample, sample);
  LongitudinalSample kept;
  kept.a = sample.a;
  kept.b = sample.b;
  for (int i = 0; i < sample.n_curves(); ++i)
    if (self.D2[i] <= cutoff) kept.curves.push_back(sample.curves[i]);

  const int n_flagged = sample.n_curves() - kept.n_curves();
  if (n_flagged == 0) return model;
  if (kept.n_curves() < std::max(2, sample.n_curves() / 2)) {
    model.warnings.push_back("outlier rejection skipped (would drop more than half the sample)");
    return model;
  }
  try {
    ReducedRankModel refit = fit_reduced_rank(kept, basis, p, nu, options);
    refit.warnings.push_back(std::to_string(n_flagged) +
                             " outlying curve(s) excluded in a refit pass");
    return refit;
  } catch (const std::exception&) {
    model.warnings.push_back("outlier rejection refit failed; keeping the full-sample fit");
    return model;
  }
}

namespace {

Eigen::VectorXd score_one(const ReducedRankModel& model, const Curve& curve) {
  const Eigen::MatrixXd B = model.basis.evaluate(curve.times);
  const Eigen::MatrixXd A = model.H * model.lambda.cwiseSqrt().asDiagonal();
  const Eigen::MatrixXd C = B * A;
  Eigen::MatrixXd G = C.transpose() * C;
  G.diagonal().array() += model.sigma * model.sigma;
  const Eigen::VectorXd x =
      Eigen::Map<const Eigen::VectorXd>(curve.values.data(), curve.values.size());
  const Eigen::VectorXd r = x - B * model.xi;
  const Eigen::VectorXd zhat = Eigen::LLT<Eigen::MatrixXd>(G).solve(C.transpose() * r);
  return model.lambda.cwiseSqrt().asDiagonal() * zhat;
}

}  // namespace

ScoreSet predict_scores(const ReducedRankModel& model_x, const ReducedRankModel& model_y,
                        const LongitudinalSample& sample_x, const LongitudinalSample& sample_y) {
  if (sample_x.n_curves() != sample_y.n_curves())
    throw DataError("predict_scores: samples have different sizes");
  std::unordered_map<std::string, int> y_index;
  for (int i = 0; i < sample_y.n_curves(); ++i) y_index[sample_y.curves[i].id] = i;

  const int n = sample_x.n_curves();
  ScoreSet scores;
  scores.ids.reserve(n);
  scores.U.resize(n, model_x.rank());
  scores.V.resize(n, model_y.rank());
  scores.D2.resize(n);
  scores.lambda_x = model_x.lambda;

  for (int i = 0; i < n; ++i) {
    const Curve& cx = sample_x.curves[i];
    auto it = y_index.find(cx.id);
    if (it == y_index.end())
      throw DataError("predict_scores: curve '" + cx.id + "' missing from the Y sample");
    scores.ids.push_back(cx.id);
    scores.U.row(i) = score_one(model_x, cx).transpose();
    scores.V.row(i) = score_one(model_y, sample_y.curves[it->second]).transpose();
    scores.D2[i] =
        (scores.U.row(i).transpose().array().square() / model_x.lambda.array()).sum();
  }
  return scores;
}

RankSelection select_rank(const LongitudinalSample& sample, const SplineBasis& basis, int p_max,
                          double nu, RankCriterion criterion, const FitOptions& options) {
  if (p_max < 1) throw std::invalid_argument("select_rank: p_max must be >= 1");
  const int N = basis.size();
  RankSelection sel;
  sel.criterion.assign(p_max, std::numeric_limits<double>::quiet_NaN());
  sel.explained_variance.assign(p_max, {});
  sel.fit_ok.assign(p_max, false);

  double best = kInf;
  for (int p = 1; p <= p_max; ++p) {
    try {
      ReducedRankModel model = fit_reduced_rank(sample, basis, p, nu, options);
      const double ll = model.loglik_trace.back();
      // Free parameters: xi (N), H on the J-orthonormal manifold
      // (N*p - p(p+1)/2), lambda (p), sigma (1).
      const double k = N + N * p - 0.5 * p * (p + 1) + p + 1;
      const double value = criterion == RankCriterion::Aic
                               ? -2.0 * ll + 2.0 * k
                               : -2.0 * ll + k * std::log(static_cast<double>(sample.n_curves()));
      sel.criterion[p - 1] = value;
      sel.fit_ok[p - 1] = true;
      const double lam_total = model.lambda.sum();
      sel.explained_variance[p - 1].resize(p);
      for (int j = 0; j < p; ++j)
        sel.explained_variance[p - 1][j] = model.lambda[j] / lam_total;
      if (value < best) {
        best = value;
        sel.best_p = p;
      }
    } catch (const std::exception&) {
      // recorded as a failed candidate
    }
  }
  if (sel.best_p == 0) throw NumericalError("select_rank: all candidate fits failed");
  return sel;
}

}  // namespace funreg
