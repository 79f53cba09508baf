#include "funreg/longitudinal.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "funreg/errors.hpp"

namespace funreg {

long LongitudinalSample::total_observations() const {
  long total = 0;
  for (const auto& c : curves) total += static_cast<long>(c.times.size());
  return total;
}

void LongitudinalSample::validate() const {
  if (!(a < b)) throw DataError("LongitudinalSample: empty domain");
  std::unordered_set<std::string> seen;
  for (const auto& c : curves) {
    if (c.times.size() != c.values.size())
      throw DataError("curve '" + c.id + "': times and values differ in length");
    if (c.times.empty())
      throw DataError("curve '" + c.id + "': no observations");
    if (!seen.insert(c.id).second)
      throw DataError("duplicate curve id '" + c.id + "'");
    for (double t : c.times) {
      if (!std::isfinite(t) || t < a || t > b)
        throw DataError("curve '" + c.id + "': time outside domain");
    }
    for (double v : c.values) {
      if (!std::isfinite(v)) throw DataError("curve '" + c.id + "': non-finite value");
    }
  }
}

LongitudinalSample LongitudinalSample::with_data_domain(std::vector<Curve> curves) {
  if (curves.empty()) throw DataError("empty sample");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& c : curves)
    for (double t : c.times) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  if (!(lo < hi)) hi = lo + 1.0;
  LongitudinalSample s;
  s.curves = std::move(curves);
  s.a = lo;
  s.b = hi;
  s.validate();
  return s;
}

}  // namespace funreg
