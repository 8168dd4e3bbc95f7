#pragma once

#include <vector>

#include "timeshoot/linalg.hpp"

namespace timeshoot {

/// Natural cubic spline through (t_n, y_n), one spline per state component.
class CubicSpline {
 public:
  /// Needs at least 3 strictly increasing knots and one value per knot.
  CubicSpline(std::vector<double> knots, const std::vector<Vector>& values);

  Vector value(double t) const;
  Vector derivative(double t) const;
  Vector second_derivative(double t) const;
  /// Writes value(t) into `out` without allocating when `out` is sized.
  void value_into(double t, Vector& out) const;

  const std::vector<double>& knots() const { return knots_; }
  Index dim() const { return values_.cols(); }

 private:
  std::size_t locate(double t) const;

  std::vector<double> knots_;
  Matrix values_;   // (N+1) x dim
  Matrix moments_;  // second derivatives at the knots, (N+1) x dim
};

CubicSpline fit_natural_cubic(const std::vector<double>& knots, const std::vector<Vector>& values);

/// Interpolation error estimate: fits the even-indexed knots, measures the
/// largest deviation at the odd-indexed ones and scales by 1/16 for the
/// halved spacing. NaN when fewer than 5 knots are given.
double spline_error_estimate(const std::vector<double>& knots, const std::vector<Vector>& values);

}  // namespace timeshoot
