#include "funreg/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "funreg/quadrature.hpp"

namespace funreg {

SplineBasis::SplineBasis(double a, double b, int n_interior_knots, int degree)
    : a_(a), b_(b), degree_(degree) {
  if (!(a < b)) throw std::invalid_argument("SplineBasis: empty domain");
  if (n_interior_knots < 0)
    throw std::invalid_argument("SplineBasis: negative interior knot count");
  if (degree < 1) throw std::invalid_argument("SplineBasis: degree must be >= 1");

  size_ = n_interior_knots + degree + 1;
  interior_.resize(n_interior_knots);
  const double h = (b - a) / (n_interior_knots + 1);
  for (int k = 0; k < n_interior_knots; ++k) interior_[k] = a + h * (k + 1);

  breaks_.resize(n_interior_knots + 2);
  breaks_.front() = a;
  std::copy(interior_.begin(), interior_.end(), breaks_.begin() + 1);
  breaks_.back() = b;

  knots_.resize(size_ + degree + 1);
  for (int i = 0; i <= degree; ++i) knots_[i] = a;
  for (int k = 0; k < n_interior_knots; ++k) knots_[degree + 1 + k] = interior_[k];
  for (int i = 0; i <= degree; ++i) knots_[size_ + i] = b;
}

void SplineBasis::local_values(double s, int& first_basis, double* values) const {
  const int d = degree_;
  // Knot span index: largest i with knots_[i] <= s, clamped to the last
  // nonempty span so s == b is handled.
  int i;
  if (s >= knots_[size_]) {
    i = size_ - 1;
  } else {
    i = static_cast<int>(std::upper_bound(knots_.begin() + d, knots_.begin() + size_ + 1, s) -
                         knots_.begin()) -
        1;
  }
  first_basis = i - d;

  double left[32], right[32];
  values[0] = 1.0;
  for (int j = 1; j <= d; ++j) {
    left[j] = s - knots_[i + 1 - j];
    right[j] = knots_[i + j] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
}

Eigen::VectorXd SplineBasis::evaluate(double s) const {
  if (s < a_ || s > b_)
    throw std::invalid_argument("SplineBasis: point " + std::to_string(s) +
                                " outside domain [" + std::to_string(a_) + ", " +
                                std::to_string(b_) + "]");
  if (degree_ + 1 > 32) throw std::invalid_argument("SplineBasis: degree too large");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size_);
  double vals[32];
  int first;
  local_values(s, first, vals);
  for (int j = 0; j <= degree_; ++j) out[first + j] = vals[j];
  return out;
}

Eigen::MatrixXd SplineBasis::evaluate(const std::vector<double>& times) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<int>(times.size()), size_);
  double vals[32];
  int first;
  for (int r = 0; r < static_cast<int>(times.size()); ++r) {
    const double s = times[r];
    if (s < a_ || s > b_)
      throw std::invalid_argument("SplineBasis: point " + std::to_string(s) +
                                  " outside domain");
    local_values(s, first, vals);
    for (int j = 0; j <= degree_; ++j) out(r, first + j) = vals[j];
  }
  return out;
}

Eigen::MatrixXd SplineBasis::evaluate(const Eigen::VectorXd& times) const {
  return evaluate(std::vector<double>(times.data(), times.data() + times.size()));
}

Eigen::MatrixXd SplineBasis::gram() const {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(size_, size_);
  const int nodes = degree_ + 1;
  double vals[32];
  int first;
  for (std::size_t k = 0; k + 1 < breaks_.size(); ++k) {
    const GaussLegendre rule = gauss_legendre(nodes, breaks_[k], breaks_[k + 1]);
    for (int g = 0; g < nodes; ++g) {
      local_values(rule.nodes[g], first, vals);
      const double w = rule.weights[g];
      for (int r = 0; r <= degree_; ++r)
        for (int c = 0; c <= degree_; ++c)
          J(first + r, first + c) += w * vals[r] * vals[c];
    }
  }
  return J;
}

Eigen::VectorXd SplineBasis::integrals() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(size_);
  const int nodes = degree_ + 1;
  double vals[32];
  int first;
  for (std::size_t k = 0; k + 1 < breaks_.size(); ++k) {
    const GaussLegendre rule = gauss_legendre(nodes, breaks_[k], breaks_[k + 1]);
    for (int g = 0; g < nodes; ++g) {
      local_values(rule.nodes[g], first, vals);
      for (int r = 0; r <= degree_; ++r) v[first + r] += rule.weights[g] * vals[r];
    }
  }
  return v;
}

bool SplineBasis::operator==(const SplineBasis& other) const {
  return a_ == other.a_ && b_ == other.b_ && degree_ == other.degree_ &&
         interior_ == other.interior_;
}

}  // namespace funreg
