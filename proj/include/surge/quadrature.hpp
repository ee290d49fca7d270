#pragma once

#include <functional>

namespace surge::quad {

struct Result {
  double value = 0.0;
  int intervals = 0;      // leaf subintervals accepted
  bool converged = true;  // false when the subdivision cap was hit
};

inline constexpr int kMaxIntervals = 1 << 16;

// Adaptive Simpson quadrature of f over [a, b] with absolute tolerance `tol`.
// Subdivision stops at kMaxIntervals leaves; the estimate is still returned
// with converged = false.
Result adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol);

}  // namespace surge::quad
