#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "funreg/gmt.hpp"
#include "funreg/longitudinal.hpp"

namespace funreg {

// One Monte Carlo cell: paired samples of n curves observed at m random
// uniform points each (x and y share the grid), scores U ~ N(0, diag(1,
// 1/2, ..., 1/p)), V = theta0' U + W with W ~ N(0, diag(1, 1/2, ..., 1/q)),
// components sqrt(2) sin(k pi s), measurement noise N(0, noise_sd^2).
// theta0 has theta_signal in the (1,1) cell and zeros elsewhere.
struct SimDesign {
  int n = 50;
  int m = 20;
  int p = 2;
  int q = 2;
  double epsilon = 0.0;        // contamination proportion, [0, 1)
  double theta_signal = 3.0;   // theta0(0, 0)
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  int n_reps = 200;
};

struct SimReplicate {
  LongitudinalSample sample_x, sample_y;
  Eigen::MatrixXd true_theta;                 // p x q
  Eigen::MatrixXd U, V, W;                    // n x p, n x q, n x q
  std::vector<std::vector<double>> grid;      // shared x/y time grid, per curve
  std::vector<std::vector<double>> noise_x, noise_y;
  std::vector<int> shuffled_order;            // contamination candidate order
  std::vector<int> contaminated_ids;          // sorted, floor(eps * n) of them
};

// Deterministic given (design.seed, rep_index).
SimReplicate generate_replicate(const SimDesign& design, int rep_index);

// Replaces the first floor(eps * n) curves of the replicate's shuffled order
// by leverage outliers: U*_1 = U_1 + 5, other score coordinates unchanged,
// V* = W (response decoupled from the regression), and rebuilds the raw
// curves from the shifted scores on the same grid with the same stored
// measurement noise.
SimReplicate contaminate(const SimReplicate& replicate, double epsilon);

// A slope surface as a coefficient matrix over component function bases.
struct SurfaceSpec {
  Eigen::MatrixXd theta;
  std::function<Eigen::VectorXd(double)> phi;  // row-component values at s
  std::function<Eigen::VectorXd(double)> psi;  // column-component values at t
};

SurfaceSpec surface_from_fit(const GmtFit& fit, const ReducedRankModel& model_x,
                             const ReducedRankModel& model_y);
SurfaceSpec surface_from_sines(const Eigen::MatrixXd& theta);

// Root integrated squared error between two slope surfaces over [0,1]^2,
// by tensor Gauss-Legendre quadrature composed over the given panel
// breakpoints (>= 64 nodes per axis in total; exact when the surfaces are
// splines whose knots appear among the breakpoints).
double rise(const SurfaceSpec& estimate, const SurfaceSpec& truth,
            const std::vector<double>& s_breaks, const std::vector<double>& t_breaks,
            int nodes_per_panel = 16);

struct EstimatorSpec {
  std::string label = "ls";          // "ls" or "gmt"
  bool robust = false;               // false: Normal scores + least squares
  double nu = 5.0;                   // t df for scores and rho (robust only)
  double alpha = 0.10;               // trimming proportion (robust only)
  TrimKind trim = TrimKind::Metric;  // robust only
};

struct SimCell {
  std::string estimator;
  double nu = 0.0;       // +inf encoded at serialization time
  double alpha = 0.0;    // trim proportion (table 1) or nominal level (table 2)
  std::string trim;      // "metric", "rank", "none"
  double epsilon = 0.0;
  int n = 0, m = 0, p = 0, q = 0;
  double value = 0.0;    // mean rise (table 1) or tail probability (table 2)
  double se = 0.0;
  int n_fail = 0;
  double mean_theta11 = 0.0;  // sign-aligned; table 1 only, not serialized
};

struct SimTable {
  std::vector<SimCell> rows;
};

// Full two-step pipeline per replicate: reduced-rank score estimation on the
// raw curves (cubic splines, 7 equispaced interior knots), then the
// regression estimator; cells report the mean root integrated squared error
// of the slope with its Monte Carlo standard error.  Replicates are seeded
// by counter, so results do not depend on n_threads.
SimTable run_table1(const std::vector<SimDesign>& designs,
                    const std::vector<EstimatorSpec>& estimators, int n_reps,
                    std::uint64_t seed, int n_threads = 1);

// Null designs (theta_signal must be 0): empirical tail probabilities of the
// Wald significance test at nominal levels .10/.05/.01, for least squares
// (moment-product covariance) and the 10% metric-trimmed GMt with nu = 5
// (sandwich covariance).
SimTable run_table2(const std::vector<SimDesign>& designs, int n_reps, std::uint64_t seed,
                    int n_threads = 1);

}  // namespace funreg
