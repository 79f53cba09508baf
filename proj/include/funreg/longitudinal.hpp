#pragma once

#include <string>
#include <vector>

namespace funreg {

// One subject's irregular measurements of a single variable.
struct Curve {
  std::string id;
  std::vector<double> times;
  std::vector<double> values;
};

// A sample of curves on a common domain [a, b].  Invariants: per curve,
// times and values have equal length >= 1 and all times lie in [a, b];
// curve ids are unique.  validate() enforces them.
struct LongitudinalSample {
  std::vector<Curve> curves;
  double a = 0.0;
  double b = 1.0;

  int n_curves() const { return static_cast<int>(curves.size()); }
  long total_observations() const;

  // Throws DataError on any invariant violation.
  void validate() const;

  // Tight domain [min time, max time]; throws DataError on an empty sample.
  static LongitudinalSample with_data_domain(std::vector<Curve> curves);
};

}  // namespace funreg
