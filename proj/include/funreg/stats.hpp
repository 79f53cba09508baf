#pragma once

namespace funreg {

// Regularized lower incomplete gamma P(a, x), absolute error < 1e-13.
double regularized_gamma_p(double a, double x);

double chi2_cdf(double x, double dof);

// Quantile by bisection on the CDF; |cdf(result) - prob| < 1e-12.
double chi2_quantile(double prob, double dof);

}  // namespace funreg
