#pragma once

#include <Eigen/Dense>
#include <vector>

namespace funreg {

// Clamped B-spline basis of a given degree on [a, b] with equally spaced
// interior knots.  Dimension N = n_interior_knots + degree + 1.  The basis is
// a partition of unity: values at any point of [a, b] are nonnegative and sum
// to one.
class SplineBasis {
 public:
  SplineBasis(double a, double b, int n_interior_knots, int degree = 3);

  double a() const { return a_; }
  double b() const { return b_; }
  int degree() const { return degree_; }
  int size() const { return size_; }
  const std::vector<double>& interior_knots() const { return interior_; }

  // Break points a, k_1, ..., k_K, b delimiting the polynomial spans.
  const std::vector<double>& breakpoints() const { return breaks_; }

  // Basis values (b_1(s), ..., b_N(s)); throws if s is outside [a, b].
  Eigen::VectorXd evaluate(double s) const;

  // Row j holds the basis values at times[j]; len(times) x N.
  Eigen::MatrixXd evaluate(const std::vector<double>& times) const;
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& times) const;

  // Gram matrix J with J_lm = integral of b_l * b_m over [a, b], computed by
  // per-span Gauss-Legendre with degree+1 nodes (exact for the piecewise
  // polynomial integrand).
  Eigen::MatrixXd gram() const;

  // Integrals of the individual basis functions over [a, b].
  Eigen::VectorXd integrals() const;

  bool operator==(const SplineBasis& other) const;

 private:
  double a_, b_;
  int degree_;
  int size_;
  std::vector<double> interior_;
  std::vector<double> breaks_;
  std::vector<double> knots_;  // clamped knot vector, size N + degree + 1

  // Index of the knot span containing s and the degree+1 nonzero values.
  void local_values(double s, int& first_basis, double* values) const;
};

}  // namespace funreg
