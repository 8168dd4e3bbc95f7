#include "timeshoot/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "timeshoot/errors.hpp"

namespace timeshoot {

CubicSpline::CubicSpline(std::vector<double> knots, const std::vector<Vector>& values)
    : knots_(std::move(knots)) {
  const std::size_t count = knots_.size();
  if (count < 3) throw ConfigError("cubic spline needs at least 3 knots");
  if (values.size() != count) throw ConfigError("cubic spline needs one value per knot");
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(knots_[i])) throw ConfigError("cubic spline knot is not finite");
    if (i > 0 && !(knots_[i] > knots_[i - 1])) {
      throw ConfigError("cubic spline knots must be strictly increasing (knot " +
                        std::to_string(i) + ")");
    }
  }
  const Index dim = values.front().size();
  const Index rows = static_cast<Index>(count);
  values_.resize(rows, dim);
  for (std::size_t i = 0; i < count; ++i) {
    if (values[i].size() != dim) throw ConfigError("cubic spline values differ in dimension");
    values_.row(static_cast<Index>(i)) = values[i].transpose();
  }

  // Thomas algorithm on the interior moments; M_0 = M_N = 0.
  moments_ = Matrix::Zero(rows, dim);
  const Index interior = rows - 2;
  std::vector<double> diag(static_cast<std::size_t>(interior));
  std::vector<double> upper(static_cast<std::size_t>(interior));
  Matrix rhs(interior, dim);
  for (Index i = 1; i <= interior; ++i) {
    const double h0 = knots_[i] - knots_[i - 1];
    const double h1 = knots_[i + 1] - knots_[i];
    const auto k = static_cast<std::size_t>(i - 1);
    diag[k] = 2.0 * (h0 + h1);
    upper[k] = h1;
    rhs.row(i - 1) = 6.0 * ((values_.row(i + 1) - values_.row(i)) / h1 -
                            (values_.row(i) - values_.row(i - 1)) / h0);
    if (i > 1) {
      const double lower = h0;
      const double w = lower / diag[k - 1];
      diag[k] -= w * upper[k - 1];
      rhs.row(i - 1) -= w * rhs.row(i - 2);
    }
  }
  for (Index i = interior; i >= 1; --i) {
    const auto k = static_cast<std::size_t>(i - 1);
    Eigen::RowVectorXd row = rhs.row(i - 1);
    if (i < interior) row -= upper[k] * moments_.row(i + 1);
    moments_.row(i) = row / diag[k];
  }
}

std::size_t CubicSpline::locate(double t) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - knots_.begin(), 1));
  return std::min(idx, knots_.size() - 1) - 1;
}

void CubicSpline::value_into(double t, Vector& out) const {
  const std::size_t i = locate(t);
  const auto r = static_cast<Index>(i);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - t) / h;
  const double b = (t - knots_[i]) / h;
  if (t == knots_[i]) {
    out = values_.row(r).transpose();
    return;
  }
  if (t == knots_[i + 1]) {
    out = values_.row(r + 1).transpose();
    return;
  }
  const double ca = (a * a * a - a) * h * h / 6.0;
  const double cb = (b * b * b - b) * h * h / 6.0;
  out.resize(dim());
  out.noalias() = (a * values_.row(r) + b * values_.row(r + 1) + ca * moments_.row(r) +
                   cb * moments_.row(r + 1))
                      .transpose();
}

Vector CubicSpline::value(double t) const {
  Vector out(dim());
  value_into(t, out);
  return out;
}

Vector CubicSpline::derivative(double t) const {
  const std::size_t i = locate(t);
  const auto r = static_cast<Index>(i);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - t) / h;
  const double b = (t - knots_[i]) / h;
  return ((values_.row(r + 1) - values_.row(r)) / h -
          (3.0 * a * a - 1.0) * h / 6.0 * moments_.row(r) +
          (3.0 * b * b - 1.0) * h / 6.0 * moments_.row(r + 1))
      .transpose();
}

Vector CubicSpline::second_derivative(double t) const {
  const std::size_t i = locate(t);
  const auto r = static_cast<Index>(i);
  const double h = knots_[i + 1] - knots_[i];
  const double a = (knots_[i + 1] - t) / h;
  const double b = (t - knots_[i]) / h;
  return (a * moments_.row(r) + b * moments_.row(r + 1)).transpose();
}

CubicSpline fit_natural_cubic(const std::vector<double>& knots, const std::vector<Vector>& values) {
  return CubicSpline(knots, values);
}

double spline_error_estimate(const std::vector<double>& knots, const std::vector<Vector>& values) {
  if (knots.size() < 5 || values.size() != knots.size()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<double> even_knots;
  std::vector<Vector> even_values;
  for (std::size_t i = 0; i < knots.size(); i += 2) {
    even_knots.push_back(knots[i]);
    even_values.push_back(values[i]);
  }
  const CubicSpline coarse(even_knots, even_values);
  double worst = 0.0;
  for (std::size_t i = 1; i < knots.size(); i += 2) {
    if (knots[i] > even_knots.back()) break;
    worst = std::max(worst, (coarse.value(knots[i]) - values[i]).lpNorm<Eigen::Infinity>());
  }
  return worst / 16.0;
}

}  // namespace timeshoot
