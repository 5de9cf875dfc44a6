#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace imip {

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// function at the given point; `analytic` is the claimed gradient at `point`.
// Returns the worst componentwise relative error, with denominator
// max(|analytic|, |numeric|, 1e-8).
inline double finite_difference_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& point, const std::vector<double>& analytic,
    double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_check: h must be > 0");
  if (point.size() != analytic.size())
    throw std::invalid_argument("finite_difference_check: gradient size mismatch");

  std::vector<double> x = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_check: non-finite function value");
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace imip
