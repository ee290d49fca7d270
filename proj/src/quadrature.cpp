#include "surge/quadrature.hpp"

#include <cmath>
#include <vector>

namespace surge::quad {

namespace {

struct Segment {
  double a, m, b;
  double fa, fm, fb;
  double whole;
  double tol;
  int depth;
};

double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

}  // namespace

Result adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol) {
  Result r;
  if (a == b) return r;
  double sign = 1.0;
  if (b < a) {
    std::swap(a, b);
    sign = -1.0;
  }
  // Explicit stack; segments are processed left to right so the summation
  // order (and hence the rounding) is fixed for a given integrand.
  std::vector<Segment> stack;
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  stack.push_back({a, m, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 0});
  int open = 1;
  while (!stack.empty()) {
    Segment s = stack.back();
    stack.pop_back();
    double lm = 0.5 * (s.a + s.m), rm = 0.5 * (s.m + s.b);
    double flm = f(lm), frm = f(rm);
    double left = simpson(s.a, s.m, s.fa, flm, s.fm);
    double right = simpson(s.m, s.b, s.fm, frm, s.fb);
    double delta = left + right - s.whole;
    bool can_split = open < kMaxIntervals && s.depth < 60;
    if (std::abs(delta) <= 15.0 * s.tol || !can_split) {
      if (!can_split && std::abs(delta) > 15.0 * s.tol) r.converged = false;
      r.value += left + right + delta / 15.0;
      ++r.intervals;
      continue;
    }
    ++open;
    // Push right first so the left half is integrated first.
    stack.push_back({s.m, rm, s.b, s.fm, frm, s.fb, right, 0.5 * s.tol, s.depth + 1});
    stack.push_back({s.a, lm, s.m, s.fa, flm, s.fm, left, 0.5 * s.tol, s.depth + 1});
  }
  r.value *= sign;
  return r;
}

}  // namespace surge::quad
