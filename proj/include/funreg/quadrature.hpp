#pragma once

#include <Eigen/Dense>

namespace funreg {

// Gauss-Legendre rule on [-1, 1]; nodes ascending.
struct GaussLegendre {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

// Computed by Newton iteration on the Legendre recurrence; exact for
// polynomials of degree <= 2n-1.
GaussLegendre gauss_legendre(int n);

// The same rule mapped to [a, b].
GaussLegendre gauss_legendre(int n, double a, double b);

}  // namespace funreg
