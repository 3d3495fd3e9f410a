#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>

namespace orbitfed {

enum class BisectStatus {
  converged,      ///< bracket narrowed below tolerance
  zero_width,     ///< lo == hi on entry
  at_lower,       ///< target not attainable inside [lo, hi]; lo returned
  at_upper,       ///< target not attainable inside [lo, hi]; hi returned
  max_iterations  ///< iteration cap hit before tolerance
};

struct BisectOptions {
  double eps_abs = 0.0;
  double eps_rel = 1e-6;  // relative to max(|lo|, |hi|)
  int max_iter = 200;
};

struct BisectResult {
  double x = 0.0;       ///< best estimate (last point satisfying the predicate, when one exists)
  double lower = 0.0;   ///< final bracket
  double upper = 0.0;
  BisectStatus status = BisectStatus::converged;
  int iterations = 0;

  bool bracketed() const noexcept {
    return status == BisectStatus::converged || status == BisectStatus::max_iterations ||
           status == BisectStatus::zero_width;
  }
};

namespace detail {
inline double bisect_tolerance(double lo, double hi, const BisectOptions& opt) {
  return std::max(opt.eps_abs, opt.eps_rel * std::max(std::abs(lo), std::abs(hi)));
}
}  // namespace detail

/// Boundary search for a monotone predicate that holds on [lo, x*) and fails on (x*, hi].
/// Returns the largest probed point where the predicate holds. When it holds on the whole
/// interval the result is hi (at_upper); when it fails everywhere the result is lo (at_lower).
template <std::predicate<double> Pred>
BisectResult bisect_last_true(Pred&& holds, double lo, double hi, BisectOptions opt = {}) {
  BisectResult r;
  r.lower = lo;
  r.upper = hi;
  if (!(hi > lo)) {
    r.x = lo;
    r.status = BisectStatus::zero_width;
    return r;
  }
  if (holds(hi)) {
    r.x = hi;
    r.status = BisectStatus::at_upper;
    return r;
  }
  if (!holds(lo)) {
    r.x = lo;
    r.status = BisectStatus::at_lower;
    return r;
  }
  const double tol = detail::bisect_tolerance(lo, hi, opt);
  double good = lo;
  double bad = hi;
  r.status = BisectStatus::max_iterations;
  for (r.iterations = 0; r.iterations < opt.max_iter; ++r.iterations) {
    if (bad - good < tol) {
      r.status = BisectStatus::converged;
      break;
    }
    const double mid = 0.5 * (good + bad);
    if (mid <= good || mid >= bad) {  // no representable midpoint left
      r.status = BisectStatus::converged;
      break;
    }
    if (holds(mid))
      good = mid;
    else
      bad = mid;
  }
  r.x = good;
  r.lower = good;
  r.upper = bad;
  return r;
}

/// Root of a monotone function (either orientation) on [lo, hi].
/// Non-bracketing inputs return the endpoint with the smaller |f| and flag it.
template <typename F>
  requires std::invocable<F, double>
BisectResult bisect_root(F&& f, double lo, double hi, BisectOptions opt = {}) {
  BisectResult r;
  r.lower = lo;
  r.upper = hi;
  if (!(hi > lo)) {
    r.x = lo;
    r.status = BisectStatus::zero_width;
    return r;
  }
  const double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) {
    r.x = lo;
    r.upper = lo;
    return r;
  }
  if (fhi == 0.0) {
    r.x = hi;
    r.lower = hi;
    return r;
  }
  if ((flo > 0) == (fhi > 0)) {
    const bool lower_closer = std::abs(flo) <= std::abs(fhi);
    r.x = lower_closer ? lo : hi;
    r.status = lower_closer ? BisectStatus::at_lower : BisectStatus::at_upper;
    return r;
  }
  const bool lo_positive = flo > 0;
  auto same_side_as_lo = [&](double x) { return (f(x) > 0) == lo_positive; };
  BisectResult b = bisect_last_true(same_side_as_lo, lo, hi, opt);
  b.x = 0.5 * (b.lower + b.upper);
  return b;
}

}  // namespace orbitfed
