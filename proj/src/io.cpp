#include "funreg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "funreg/errors.hpp"

namespace funreg {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double parse_double(const std::string& s, long line_no, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" + s + "'");
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_to_json_rows(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd matrix_from_json_rows(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw DataError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

json nu_to_json(double nu) {
  if (std::isinf(nu)) return "inf";
  return nu;
}

double nu_from_json(const json& j) {
  if (j.is_null()) return kInf;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "+inf" || s == "Inf") return kInf;
    throw DataError("unrecognized nu value '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LongitudinalSample read_long_csv(const std::string& path, Transform transform) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw DataError("'" + path + "': empty file");
  ++line_no;
  {
    const auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "curve_id" || header[1] != "time" ||
        header[2] != "value")
      throw DataError("'" + path + "' line 1: expected header 'curve_id,time,value'");
  }

  std::vector<Curve> curves;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3)
      throw DataError("'" + path + "' line " + std::to_string(line_no) +
                      ": expected 3 fields, got " + std::to_string(fields.size()));
    if (fields[2].empty()) continue;  // missing observation
    const double t = parse_double(fields[1], line_no, "time");
    double v = parse_double(fields[2], line_no, "value");
    switch (transform) {
      case Transform::None:
        break;
      case Transform::Log:
        if (!(v > 0.0))
          throw DataError("'" + path + "' line " + std::to_string(line_no) +
                          ": log transform needs positive values");
        v = std::log(v);
        break;
      case Transform::Sqrt:
        if (v < 0.0)
          throw DataError("'" + path + "' line " + std::to_string(line_no) +
                          ": sqrt transform needs nonnegative values");
        v = std::sqrt(v);
        break;
    }
    auto it = index.find(fields[0]);
    if (it == index.end()) {
      index.emplace(fields[0], curves.size());
      curves.push_back({fields[0], {t}, {v}});
    } else {
      curves[it->second].times.push_back(t);
      curves[it->second].values.push_back(v);
    }
  }
  if (curves.empty()) throw DataError("'" + path + "': no observations");

  for (auto& c : curves) {
    std::vector<std::size_t> order(c.times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return c.times[a] < c.times[b]; });
    std::vector<double> st(order.size()), sv(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      st[i] = c.times[order[i]];
      sv[i] = c.values[order[i]];
    }
    c.times = std::move(st);
    c.values = std::move(sv);
  }
  return LongitudinalSample::with_data_domain(std::move(curves));
}

std::string model_to_json(const ReducedRankModel& model) {
  json j;
  j["degree"] = model.basis.degree();
  json knots = json::array();
  for (double k : model.basis.interior_knots()) knots.push_back(k);
  j["knots"] = knots;
  j["domain"] = {model.basis.a(), model.basis.b()};
  j["xi"] = vector_to_json(model.xi);
  j["H"] = matrix_to_json_rows(model.H);
  j["lambda"] = vector_to_json(model.lambda);
  j["sigma"] = model.sigma;
  j["nu"] = nu_to_json(model.nu);
  return j.dump(2) + "\n";
}

ReducedRankModel model_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model JSON parse error: ") + e.what());
  }
  const int degree = j.at("degree").get<int>();
  const auto domain = j.at("domain");
  const double a = domain.at(0).get<double>(), b = domain.at(1).get<double>();
  const auto knots = j.at("knots");
  SplineBasis basis(a, b, static_cast<int>(knots.size()), degree);
  for (std::size_t k = 0; k < knots.size(); ++k) {
    if (std::abs(knots[k].get<double>() - basis.interior_knots()[k]) > 1e-9 * (b - a))
      throw DataError("model JSON: only equally spaced interior knots are supported");
  }
  ReducedRankModel model{basis};
  model.xi = vector_from_json(j.at("xi"));
  model.H = matrix_from_json_rows(j.at("H"));
  model.lambda = vector_from_json(j.at("lambda"));
  model.sigma = j.at("sigma").get<double>();
  model.nu = nu_from_json(j.at("nu"));
  if (model.xi.size() != basis.size() || model.H.rows() != basis.size() ||
      model.H.cols() != model.lambda.size())
    throw DataError("model JSON: inconsistent dimensions");
  return model;
}

std::string scores_to_csv(const ScoreSet& scores) {
  std::ostringstream out;
  out << "curve_id";
  for (int k = 1; k <= scores.p(); ++k) out << ",U" << k;
  for (int l = 1; l <= scores.q(); ++l) out << ",V" << l;
  out << ",D2\n";
  for (int i = 0; i < scores.n(); ++i) {
    out << scores.ids[i];
    for (int k = 0; k < scores.p(); ++k) out << ',' << fmt17(scores.U(i, k));
    for (int l = 0; l < scores.q(); ++l) out << ',' << fmt17(scores.V(i, l));
    out << ',' << fmt17(scores.D2[i]) << '\n';
  }
  return out.str();
}

ScoreSet scores_from_csv(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("scores CSV: empty input");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "curve_id" || header.back() != "D2")
    throw DataError("scores CSV: malformed header");
  int p = 0, q = 0;
  for (std::size_t i = 1; i + 1 < header.size(); ++i) {
    if (header[i] == "U" + std::to_string(p + 1) && q == 0)
      ++p;
    else if (header[i] == "V" + std::to_string(q + 1))
      ++q;
    else
      throw DataError("scores CSV: unexpected column '" + header[i] + "'");
  }
  if (p == 0 || q == 0) throw DataError("scores CSV: need U and V columns");

  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != 2 + p + q)
      throw DataError("scores CSV line " + std::to_string(line_no) + ": wrong field count");
    ids.push_back(fields[0]);
    std::vector<double> row;
    for (std::size_t f = 1; f < fields.size(); ++f)
      row.push_back(parse_double(fields[f], line_no, "score"));
    rows.push_back(std::move(row));
  }
  ScoreSet scores;
  const int n = static_cast<int>(rows.size());
  scores.ids = std::move(ids);
  scores.U.resize(n, p);
  scores.V.resize(n, q);
  scores.D2.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < p; ++k) scores.U(i, k) = rows[i][k];
    for (int l = 0; l < q; ++l) scores.V(i, l) = rows[i][p + l];
    scores.D2[i] = rows[i][p + q];
  }
  return scores;
}

std::string fit_to_json(const GmtFit& fit) {
  json j;
  j["theta"] = matrix_to_json_rows(fit.theta);
  j["sigma"] = matrix_to_json_rows(fit.sigma);
  j["weights"] = vector_to_json(fit.weights);
  j["e"] = vector_to_json(fit.e);
  j["n_trimmed"] = fit.n_trimmed;
  j["converged"] = fit.converged;
  j["iterations"] = fit.n_iter;
  j["objective_trace"] = fit.objective_trace;
  return j.dump(2) + "\n";
}

GmtFit fit_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("fit JSON parse error: ") + e.what());
  }
  GmtFit fit;
  fit.theta = matrix_from_json_rows(j.at("theta"));
  fit.sigma = matrix_from_json_rows(j.at("sigma"));
  fit.weights = vector_from_json(j.at("weights"));
  fit.e = vector_from_json(j.at("e"));
  fit.residuals.resize(0, fit.theta.cols());
  fit.n_trimmed = j.at("n_trimmed").get<int>();
  fit.converged = j.at("converged").get<bool>();
  fit.n_iter = j.at("iterations").get<int>();
  fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  return fit;
}

std::string test_to_json(const TestResult& result, const Eigen::MatrixXd& omega) {
  json j;
  switch (result.method) {
    case TestMethod::WaldSandwich: j["method"] = "wald_sandwich"; break;
    case TestMethod::WaldBootstrap: j["method"] = "wald_bootstrap"; break;
    case TestMethod::Permutation: j["method"] = "permutation"; break;
  }
  j["Q"] = result.Q;
  j["df"] = result.df;
  j["p_value"] = result.p_value;
  j["n_resamples"] = result.n_resamples;
  j["n_failed"] = result.n_failed;
  j["omega"] = matrix_to_json_rows(omega);
  return j.dump(2) + "\n";
}

std::string surface_to_csv(const SlopeSurface& surface) {
  std::ostringstream out;
  out << "s,t,beta\n";
  for (Eigen::Index i = 0; i < surface.s_grid.size(); ++i)
    for (Eigen::Index j = 0; j < surface.t_grid.size(); ++j)
      out << fmt17(surface.s_grid[i]) << ',' << fmt17(surface.t_grid[j]) << ','
          << fmt17(surface.values(i, j)) << '\n';
  return out.str();
}

namespace {

std::string nu_to_text(double nu) { return std::isinf(nu) ? "inf" : fmt17(nu); }

}  // namespace

std::string table_to_csv(const SimTable& table) {
  std::ostringstream out;
  out << "estimator,nu,alpha,trim,epsilon,n,m,p,q,mean_or_prob,se,n_fail\n";
  for (const auto& row : table.rows) {
    out << row.estimator << ',' << nu_to_text(row.nu) << ',' << fmt17(row.alpha) << ','
        << row.trim << ',' << fmt17(row.epsilon) << ',' << row.n << ',' << row.m << ','
        << row.p << ',' << row.q << ',' << fmt17(row.value) << ',' << fmt17(row.se) << ','
        << row.n_fail << '\n';
  }
  return out.str();
}

std::string table_to_json(const SimTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    json r;
    r["estimator"] = row.estimator;
    r["nu"] = nu_to_json(row.nu);
    r["alpha"] = row.alpha;
    r["trim"] = row.trim;
    r["epsilon"] = row.epsilon;
    r["n"] = row.n;
    r["m"] = row.m;
    r["p"] = row.p;
    r["q"] = row.q;
    r["mean_or_prob"] = row.value;
    r["se"] = row.se;
    r["n_fail"] = row.n_fail;
    rows.push_back(r);
  }
  json j;
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

ExperimentSpec experiment_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("experiment JSON parse error: ") + e.what());
  }
  ExperimentSpec spec;
  spec.table = j.at("table").get<int>();
  if (spec.table != 1 && spec.table != 2)
    throw DataError("experiment JSON: table must be 1 or 2");
  spec.n_reps = j.at("n_reps").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  const double default_signal =
      j.value("theta_signal", spec.table == 1 ? 3.0 : 0.0);
  const double default_noise = j.value("noise_sd", 0.1);

  if (!j.contains("designs") || !j["designs"].is_array() || j["designs"].empty())
    throw DataError("experiment JSON: empty design grid");
  for (const auto& dj : j["designs"]) {
    SimDesign d;
    d.n = dj.at("n").get<int>();
    d.m = dj.at("m").get<int>();
    d.p = dj.at("p").get<int>();
    d.q = dj.at("q").get<int>();
    d.epsilon = dj.value("epsilon", 0.0);
    d.theta_signal = dj.value("theta_signal", default_signal);
    d.noise_sd = dj.value("noise_sd", default_noise);
    d.seed = spec.seed;
    d.n_reps = spec.n_reps;
    spec.designs.push_back(d);
  }

  if (spec.table == 1) {
    if (!j.contains("estimators") || !j["estimators"].is_array() || j["estimators"].empty())
      throw DataError("experiment JSON: table 1 needs an estimator list");
    for (const auto& ej : j["estimators"]) {
      EstimatorSpec e;
      const std::string name = ej.at("name").get<std::string>();
      if (name == "ls") {
        e.label = "ls";
        e.robust = false;
      } else if (name == "gmt") {
        e.label = "gmt";
        e.robust = true;
        e.nu = ej.at("nu").get<double>();
        e.alpha = ej.at("alpha").get<double>();
        const std::string trim = ej.at("trim").get<std::string>();
        if (trim == "metric")
          e.trim = TrimKind::Metric;
        else if (trim == "rank")
          e.trim = TrimKind::Rank;
        else if (trim == "none")
          e.trim = TrimKind::Unit;
        else
          throw DataError("experiment JSON: unknown trim '" + trim + "'");
      } else {
        throw DataError("experiment JSON: unknown estimator '" + name + "'");
      }
      spec.estimators.push_back(e);
    }
  }
  return spec;
}

std::string validate_design(const SimDesign& design, int table) {
  if (design.n < 2) return "n must be >= 2";
  if (design.m < 1) return "m must be >= 1";
  if (design.p < 1 || design.q < 1) return "p and q must be >= 1";
  if (design.epsilon < 0.0 || design.epsilon >= 1.0) return "epsilon must lie in [0, 1)";
  if (design.noise_sd < 0.0) return "noise_sd must be nonnegative";
  if (table == 2 && design.theta_signal != 0.0) return "table 2 requires theta_signal = 0";
  if (table == 2 && design.epsilon != 0.0) return "table 2 requires epsilon = 0";
  return "";
}

}  // namespace funreg
