#pragma once

#include <string>
#include <vector>

#include "funreg/fpca.hpp"
#include "funreg/gmt.hpp"
#include "funreg/inference.hpp"
#include "funreg/simulation.hpp"

namespace funreg {

enum class Transform { None, Log, Sqrt };

// Long-format ingestion: header `curve_id,time,value` required, times need
// not be sorted (curves are sorted internally), rows with an empty value
// field are skipped.  Parse errors carry the 1-based line number.
LongitudinalSample read_long_csv(const std::string& path, Transform transform = Transform::None);

// 17-significant-digit (round-trippable) formatting used by all CSV output.
std::string fmt17(double x);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Model serialization: {degree, knots, domain, xi, H (row-major), lambda,
// sigma, nu}; nu = +inf is encoded as the string "inf".
std::string model_to_json(const ReducedRankModel& model);
ReducedRankModel model_from_json(const std::string& json_text);

std::string scores_to_csv(const ScoreSet& scores);
ScoreSet scores_from_csv(const std::string& csv_text);

// Fit report: {theta (row-major), sigma, weights, e, n_trimmed, converged,
// iterations, objective_trace}.
std::string fit_to_json(const GmtFit& fit);
GmtFit fit_from_json(const std::string& json_text);

// Test report: {method, Q, df, p_value, n_resamples, n_failed, omega
// (row-major)}.
std::string test_to_json(const TestResult& result, const Eigen::MatrixXd& omega);

// Slope surface, header `s,t,beta`, s varying slowest.
std::string surface_to_csv(const SlopeSurface& surface);

// Simulation tables: header estimator,nu,alpha,trim,epsilon,n,m,p,q,
// mean_or_prob,se,n_fail, plus a machine-readable JSON twin.
std::string table_to_csv(const SimTable& table);
std::string table_to_json(const SimTable& table);

// Monte Carlo experiment file.
struct ExperimentSpec {
  int table = 1;
  std::vector<SimDesign> designs;
  std::vector<EstimatorSpec> estimators;  // table 1 only
  int n_reps = 200;
  std::uint64_t seed = 0;
};

ExperimentSpec experiment_from_json(const std::string& json_text);

// Empty string when the design is usable for the given table, otherwise the
// reason it is rejected.
std::string validate_design(const SimDesign& design, int table);

}  // namespace funreg
