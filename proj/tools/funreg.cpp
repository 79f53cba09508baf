// funreg: outlier-resistant functional linear regression for sparse,
// irregularly sampled longitudinal data.
//
// Subcommands: fpca (reduced-rank score models), regress (least-squares or
// robust GMt slope), test (Wald / bootstrap / permutation significance),
// predict (response trajectories), simulate (Monte Carlo tables).  Every
// command is a pure function of its input files, flags and seed; re-runs
// produce byte-identical outputs.  Exit codes: 0 success, 2 usage error,
// 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "funreg/errors.hpp"
#include "funreg/io.hpp"

namespace fs = std::filesystem;
using namespace funreg;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double parse_nu(const std::string& text) {
  if (text == "inf" || text == "+inf" || text == "Inf") return kInf;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("--nu: cannot parse '" + text + "'");
  }
  if (pos != text.size() || !(v > 0.0))
    throw std::invalid_argument("--nu must be a positive number or 'inf'");
  return v;
}

Transform parse_transform(const std::string& text) {
  if (text == "none") return Transform::None;
  if (text == "log") return Transform::Log;
  if (text == "sqrt") return Transform::Sqrt;
  throw std::invalid_argument("unknown transform '" + text + "'");
}

TrimKind parse_trim(const std::string& text) {
  if (text == "metric") return TrimKind::Metric;
  if (text == "rank") return TrimKind::Rank;
  if (text == "none") return TrimKind::Unit;
  throw std::invalid_argument("unknown trim kind '" + text + "'");
}

Eigen::VectorXd linspace(double a, double b, int n) {
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g[i] = n == 1 ? a : a + (b - a) * i / (n - 1.0);
  return g;
}

struct FpcaArgs {
  std::string x_path, y_path, out_dir;
  int degree = 3, knots = 7;
  double domain_min = std::numeric_limits<double>::quiet_NaN();
  double domain_max = std::numeric_limits<double>::quiet_NaN();
  int p = 2, q = 2;
  bool auto_rank = false;
  int p_max = 6;
  std::string criterion = "bic";
  std::string nu_text = "inf";
  std::string x_transform = "none", y_transform = "none";
  double tol = 1e-8;
  int max_iter = 500;
  double reject_alpha = 0.01;
};

struct RegressArgs {
  std::string dir;
  std::string estimator = "gmt";
  double nu_rho = 5.0;
  std::string trim = "metric";
  double alpha = 0.10;
  double tol = 1e-10;
  int max_iter = 500;
  int grid = 50;
};

struct TestArgs {
  std::string dir;
  std::string method = "wald";
  std::string estimator = "gmt";
  double nu_rho = 5.0;
  std::string trim = "metric";
  double alpha = 0.10;
  double tol = 1e-10;
  int max_iter = 500;
  int n_resamples = 500;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
};

struct PredictArgs {
  std::string dir;
  std::string y_path;
  std::string y_transform = "none";
  int grid = 50;
};

struct SimulateArgs {
  std::string experiment_path;
  std::string out_prefix;
  int threads = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int effective_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

GmtConfig build_gmt_config(const std::string& estimator, double nu_rho,
                           const std::string& trim, double alpha, double tol, int max_iter) {
  GmtConfig config;
  config.tol = tol;
  config.max_iter = max_iter;
  if (estimator == "ls") {
    // least squares through the same machinery
    config.family = RhoFamily::Linear;
    config.weights = {TrimKind::Unit, 0.0};
  } else if (estimator == "gmt") {
    config.nu_rho = nu_rho;
    config.weights = {parse_trim(trim), alpha};
  } else {
    throw std::invalid_argument("unknown estimator '" + estimator + "'");
  }
  return config;
}

ReducedRankModel fit_one_sample(const LongitudinalSample& sample, const FpcaArgs& args,
                                int rank, double nu, const std::string& label) {
  SplineBasis basis(sample.a, sample.b, args.knots, args.degree);
  FitOptions options;
  options.tol = args.tol;
  options.max_iter = args.max_iter;
  int use_rank = rank;
  if (args.auto_rank) {
    const RankCriterion crit =
        args.criterion == "aic" ? RankCriterion::Aic : RankCriterion::Bic;
    const RankSelection sel = select_rank(sample, basis, args.p_max, nu, crit, options);
    use_rank = sel.best_p;
    std::cerr << "[" << label << "] selected rank " << use_rank << " by " << args.criterion
              << "\n";
  }
  ReducedRankModel model =
      std::isinf(nu) ? fit_reduced_rank(sample, basis, use_rank, nu, options)
                     : fit_reduced_rank_with_rejection(sample, basis, use_rank, nu,
                                                       args.reject_alpha, options);
  for (const auto& w : model.warnings) std::cerr << "[" << label << "] warning: " << w << "\n";
  return model;
}

int cmd_fpca(const FpcaArgs& args) {
  const double nu = parse_nu(args.nu_text);
  LongitudinalSample sx = read_long_csv(args.x_path, parse_transform(args.x_transform));
  LongitudinalSample sy = read_long_csv(args.y_path, parse_transform(args.y_transform));
  if (!std::isnan(args.domain_min) || !std::isnan(args.domain_max)) {
    if (std::isnan(args.domain_min) || std::isnan(args.domain_max))
      throw std::invalid_argument("--domain-min and --domain-max must be given together");
    sx.a = sy.a = args.domain_min;
    sx.b = sy.b = args.domain_max;
    sx.validate();
    sy.validate();
  }

  const ReducedRankModel mx = fit_one_sample(sx, args, args.p, nu, "x");
  const ReducedRankModel my = fit_one_sample(sy, args, args.q, nu, "y");
  const ScoreSet scores = predict_scores(mx, my, sx, sy);

  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);
  write_text_file((dir / "x_model.json").string(), model_to_json(mx));
  write_text_file((dir / "y_model.json").string(), model_to_json(my));
  write_text_file((dir / "scores.csv").string(), scores_to_csv(scores));

  std::ostringstream ev;
  ev << "variable,component,lambda,fraction,cumulative\n";
  for (const auto& [name, model] : {std::pair<std::string, const ReducedRankModel&>{"x", mx},
                                    {"y", my}}) {
    const double total = model.lambda.sum();
    double cum = 0.0;
    for (int k = 0; k < model.rank(); ++k) {
      cum += model.lambda[k] / total;
      ev << name << ',' << (k + 1) << ',' << fmt17(model.lambda[k]) << ','
         << fmt17(model.lambda[k] / total) << ',' << fmt17(cum) << '\n';
    }
  }
  write_text_file((dir / "explained_variance.csv").string(), ev.str());

  // D2 histogram + empirical quantiles, for picking the trimming proportion.
  {
    const int n = scores.n();
    const int bins = std::max(5, static_cast<int>(std::ceil(std::sqrt(n))));
    const double hi = scores.D2.maxCoeff() * (1.0 + 1e-9) + 1e-12;
    std::vector<int> counts(bins, 0);
    for (int i = 0; i < n; ++i)
      ++counts[std::min(bins - 1, static_cast<int>(scores.D2[i] / hi * bins))];
    std::ostringstream hist;
    hist << "bin_left,bin_right,count\n";
    for (int b = 0; b < bins; ++b)
      hist << fmt17(hi * b / bins) << ',' << fmt17(hi * (b + 1) / bins) << ',' << counts[b]
           << '\n';
    write_text_file((dir / "d2_hist.csv").string(), hist.str());

    const std::vector<double> probs = {0.50, 0.75, 0.90, 0.95, 0.99};
    const std::vector<double> qs = d2_quantiles(scores, probs);
    std::ostringstream qcsv;
    qcsv << "prob,value\n";
    for (std::size_t i = 0; i < probs.size(); ++i)
      qcsv << fmt17(probs[i]) << ',' << fmt17(qs[i]) << '\n';
    write_text_file((dir / "d2_quantiles.csv").string(), qcsv.str());
  }
  std::cout << "fpca: wrote models, scores and D2 summaries to " << args.out_dir << "\n";
  return 0;
}

int cmd_regress(const RegressArgs& args) {
  const fs::path dir(args.dir);
  const ReducedRankModel mx = model_from_json(read_text_file((dir / "x_model.json").string()));
  const ReducedRankModel my = model_from_json(read_text_file((dir / "y_model.json").string()));
  ScoreSet scores = scores_from_csv(read_text_file((dir / "scores.csv").string()));
  scores.lambda_x = mx.lambda;
  if (scores.p() != mx.rank() || scores.q() != my.rank())
    throw DataError("scores.csv does not match the model ranks");

  const GmtConfig config = build_gmt_config(args.estimator, args.nu_rho, args.trim, args.alpha,
                                            args.tol, args.max_iter);
  const GmtFit fit =
      args.estimator == "ls" ? least_squares(scores) : gmt_fit(scores, config);
  if (!fit.converged)
    std::cerr << "warning: fixed-point iteration did not converge in " << args.max_iter
              << " passes\n";
  if (fit.sigma_regularized)
    std::cerr << "warning: scatter matrix was ridged to stay positive definite\n";

  write_text_file((dir / "fit.json").string(), fit_to_json(fit));

  const SlopeSurface surface =
      slope_surface(fit, mx, my, linspace(mx.basis.a(), mx.basis.b(), args.grid),
                    linspace(my.basis.a(), my.basis.b(), args.grid));
  write_text_file((dir / "beta_surface.csv").string(), surface_to_csv(surface));

  std::ostringstream trimmed;
  for (int i = 0; i < scores.n(); ++i)
    if (fit.weights[i] == 0.0) trimmed << scores.ids[i] << '\n';
  write_text_file((dir / "trimmed_ids.txt").string(), trimmed.str());

  std::cout << "regress: " << args.estimator << " fit, " << fit.n_trimmed
            << " trimmed, converged=" << (fit.converged ? "yes" : "no") << "\n";
  return 0;
}

int cmd_test(const TestArgs& args) {
  const fs::path dir(args.dir);
  const ReducedRankModel mx = model_from_json(read_text_file((dir / "x_model.json").string()));
  ScoreSet scores = scores_from_csv(read_text_file((dir / "scores.csv").string()));
  scores.lambda_x = mx.lambda;

  const int n = scores.n();
  const int pq = scores.p() * scores.q();
  const int ratio_floor = args.estimator == "gmt" ? 35 : 15;
  if (n < ratio_floor * pq)
    std::cerr << "warning: n/(p*q) = " << n << "/" << pq
              << " is below " << ratio_floor
              << "; the asymptotic Wald test is unreliable, prefer bootstrap or permutation\n";

  if ((args.method == "bootstrap" || args.method == "permutation") && !args.seed_given)
    throw std::invalid_argument("--seed is required for resampling methods");

  const GmtConfig config = build_gmt_config(args.estimator, args.nu_rho, args.trim, args.alpha,
                                            args.tol, args.max_iter);
  const int threads = effective_threads(args.threads);

  TestResult result;
  Eigen::MatrixXd omega;
  if (args.method == "wald") {
    if (args.estimator == "ls") {
      const GmtFit fit = least_squares(scores);
      const SandwichEstimate est = ls_covariance(fit, scores);
      result = wald_test(fit, est);
      omega = est.Omega;
    } else {
      const GmtFit fit = gmt_fit(scores, config);
      const SandwichEstimate est = sandwich(fit, scores, config);
      result = wald_test(fit, est);
      omega = est.Omega;
    }
  } else if (args.method == "bootstrap") {
    const BootstrapResult boot =
        bootstrap_covariance(scores, config, args.n_resamples, args.seed, threads);
    result = boot.test;
    omega = boot.omega.Omega;
  } else if (args.method == "permutation") {
    result = permutation_test(scores, config, args.n_resamples, args.seed, threads);
    omega = Eigen::MatrixXd::Zero(pq, pq);
  } else {
    throw std::invalid_argument("unknown method '" + args.method + "'");
  }

  write_text_file((dir / "test.json").string(), test_to_json(result, omega));
  std::cout << "test: Q = " << result.Q << ", df = " << result.df
            << ", p = " << result.p_value << "\n";
  return 0;
}

int cmd_predict(const PredictArgs& args) {
  const fs::path dir(args.dir);
  const ReducedRankModel mx = model_from_json(read_text_file((dir / "x_model.json").string()));
  const ReducedRankModel my = model_from_json(read_text_file((dir / "y_model.json").string()));
  ScoreSet scores = scores_from_csv(read_text_file((dir / "scores.csv").string()));
  scores.lambda_x = mx.lambda;
  const GmtFit fit = fit_from_json(read_text_file((dir / "fit.json").string()));
  const LongitudinalSample sy = read_long_csv(args.y_path, parse_transform(args.y_transform));

  const Eigen::VectorXd grid = linspace(my.basis.a(), my.basis.b(), args.grid);
  const PredictionResult pred = predict_response(fit, scores, my, grid, sy);

  std::ostringstream out;
  out << "curve_id,t,y_hat\n";
  for (int i = 0; i < static_cast<int>(pred.ids.size()); ++i)
    for (Eigen::Index j = 0; j < grid.size(); ++j)
      out << pred.ids[i] << ',' << fmt17(grid[j]) << ',' << fmt17(pred.curves(i, j)) << '\n';
  write_text_file((dir / "predictions.csv").string(), out.str());

  nlohmann::json summary;
  summary["n_curves"] = pred.ids.size();
  summary["grid_size"] = args.grid;
  summary["root_median_squared_error"] = pred.root_median_squared_error;
  write_text_file((dir / "prediction_summary.json").string(), summary.dump(2) + "\n");

  std::cout << "predict: root median squared error = " << pred.root_median_squared_error
            << "\n";
  return 0;
}

int cmd_simulate(const SimulateArgs& args) {
  ExperimentSpec spec = experiment_from_json(read_text_file(args.experiment_path));
  if (args.seed_given) {
    spec.seed = args.seed;
    for (auto& d : spec.designs) d.seed = args.seed;
  }

  std::vector<SimDesign> valid;
  for (std::size_t i = 0; i < spec.designs.size(); ++i) {
    const std::string why = validate_design(spec.designs[i], spec.table);
    if (why.empty()) {
      valid.push_back(spec.designs[i]);
    } else {
      std::cerr << "skipping design cell " << i << ": " << why << "\n";
    }
  }
  if (valid.empty()) throw DataError("experiment: no valid design cells");

  const int threads = effective_threads(args.threads);
  const SimTable table = spec.table == 1
                             ? run_table1(valid, spec.estimators, spec.n_reps, spec.seed, threads)
                             : run_table2(valid, spec.n_reps, spec.seed, threads);

  write_text_file(args.out_prefix + ".csv", table_to_csv(table));
  write_text_file(args.out_prefix + ".json", table_to_json(table));
  std::cout << "simulate: wrote " << table.rows.size() << " cells to " << args.out_prefix
            << ".{csv,json}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"outlier-resistant functional regression for longitudinal data"};
  app.require_subcommand(1);
  app.set_config("--config");

  FpcaArgs fpca_args;
  auto* fpca = app.add_subcommand("fpca", "fit reduced-rank score models to paired samples");
  fpca->add_option("--x", fpca_args.x_path, "predictor CSV (curve_id,time,value)")->required();
  fpca->add_option("--y", fpca_args.y_path, "response CSV (curve_id,time,value)")->required();
  fpca->add_option("--out", fpca_args.out_dir, "output directory")->required();
  fpca->add_option("--degree", fpca_args.degree, "spline degree");
  fpca->add_option("--knots", fpca_args.knots, "number of interior knots");
  fpca->add_option("--domain-min", fpca_args.domain_min, "basis domain lower end");
  fpca->add_option("--domain-max", fpca_args.domain_max, "basis domain upper end");
  fpca->add_option("--p", fpca_args.p, "number of predictor components");
  fpca->add_option("--q", fpca_args.q, "number of response components");
  fpca->add_flag("--auto-rank", fpca_args.auto_rank, "choose ranks by information criterion");
  fpca->add_option("--p-max", fpca_args.p_max, "largest candidate rank for --auto-rank");
  fpca->add_option("--criterion", fpca_args.criterion, "aic or bic")
      ->check(CLI::IsMember({"aic", "bic"}));
  fpca->add_option("--nu", fpca_args.nu_text, "t degrees of freedom, or 'inf' for Normal");
  fpca->add_option("--x-transform", fpca_args.x_transform, "none, log or sqrt")
      ->check(CLI::IsMember({"none", "log", "sqrt"}));
  fpca->add_option("--y-transform", fpca_args.y_transform, "none, log or sqrt")
      ->check(CLI::IsMember({"none", "log", "sqrt"}));
  fpca->add_option("--tol", fpca_args.tol, "EM relative log-likelihood tolerance");
  fpca->add_option("--max-iter", fpca_args.max_iter, "EM iteration cap");
  fpca->add_option("--reject-alpha", fpca_args.reject_alpha,
                   "t-model outlying-curve rejection level (0 disables)");

  RegressArgs regress_args;
  auto* regress = app.add_subcommand("regress", "estimate the regression slope from scores");
  regress->add_option("--dir", regress_args.dir, "directory with fpca artifacts")->required();
  regress->add_option("--estimator", regress_args.estimator, "ls or gmt")
      ->check(CLI::IsMember({"ls", "gmt"}));
  regress->add_option("--nu-rho", regress_args.nu_rho, "df of the t-type loss");
  regress->add_option("--trim", regress_args.trim, "metric, rank or none")
      ->check(CLI::IsMember({"metric", "rank", "none"}));
  regress->add_option("--alpha", regress_args.alpha, "trimming proportion in [0,1)");
  regress->add_option("--tol", regress_args.tol, "fixed-point tolerance");
  regress->add_option("--max-iter", regress_args.max_iter, "fixed-point iteration cap");
  regress->add_option("--grid", regress_args.grid, "slope surface grid resolution per axis");

  TestArgs test_args;
  auto* test = app.add_subcommand("test", "significance test for the regression");
  test->add_option("--dir", test_args.dir, "directory with fpca artifacts")->required();
  test->add_option("--method", test_args.method, "wald, bootstrap or permutation")
      ->check(CLI::IsMember({"wald", "bootstrap", "permutation"}));
  test->add_option("--estimator", test_args.estimator, "ls or gmt")
      ->check(CLI::IsMember({"ls", "gmt"}));
  test->add_option("--nu-rho", test_args.nu_rho, "df of the t-type loss");
  test->add_option("--trim", test_args.trim, "metric, rank or none")
      ->check(CLI::IsMember({"metric", "rank", "none"}));
  test->add_option("--alpha", test_args.alpha, "trimming proportion in [0,1)");
  test->add_option("--tol", test_args.tol, "fixed-point tolerance");
  test->add_option("--max-iter", test_args.max_iter, "fixed-point iteration cap");
  test->add_option("--n-resamples", test_args.n_resamples,
                   "bootstrap replicates or permutations");
  test->add_option("--seed", test_args.seed, "stream seed (required for resampling)")
      ->trigger_on_parse()
      ->each([&test_args](const std::string&) { test_args.seed_given = true; });
  test->add_option("--threads", test_args.threads, "worker threads (0 = all cores)");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "predicted response trajectories");
  predict->add_option("--dir", predict_args.dir, "directory with fpca + regress artifacts")
      ->required();
  predict->add_option("--y", predict_args.y_path, "observed response CSV")->required();
  predict->add_option("--y-transform", predict_args.y_transform, "none, log or sqrt")
      ->check(CLI::IsMember({"none", "log", "sqrt"}));
  predict->add_option("--grid", predict_args.grid, "prediction grid size");

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "run a Monte Carlo experiment file");
  simulate->add_option("--experiment", sim_args.experiment_path, "experiment JSON")->required();
  simulate->add_option("--out", sim_args.out_prefix, "output prefix for .csv/.json")->required();
  simulate->add_option("--threads", sim_args.threads, "worker threads (0 = all cores)");
  simulate->add_option("--seed", sim_args.seed, "override the experiment seed")
      ->trigger_on_parse()
      ->each([&sim_args](const std::string&) { sim_args.seed_given = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fpca->parsed()) return cmd_fpca(fpca_args);
    if (regress->parsed()) return cmd_regress(regress_args);
    if (test->parsed()) return cmd_test(test_args);
    if (predict->parsed()) return cmd_predict(predict_args);
    if (simulate->parsed()) return cmd_simulate(sim_args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
