#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include <timeshoot/field.hpp>
#include <timeshoot/linalg.hpp>

namespace testing {

inline std::filesystem::path source_dir() { return TIMESHOOT_SOURCE_DIR; }

inline double rel(const timeshoot::Matrix& a, const timeshoot::Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline double max_rel(const std::vector<timeshoot::Vector>& a,
                      const std::vector<timeshoot::Vector>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, (a[i] - b[i]).norm() / std::max(b[i].norm(), 1e-300));
  }
  return worst;
}

inline timeshoot::Matrix random_matrix(timeshoot::Index rows, timeshoot::Index cols,
                                       std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  timeshoot::Matrix m(rows, cols);
  for (timeshoot::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline timeshoot::Vector random_vector(timeshoot::Index n, std::mt19937_64& rng,
                                       double scale = 1.0) {
  return random_matrix(n, 1, rng, scale);
}

/// Bitwise equality of two vectors (NaN-free inputs).
inline bool same_bits(const timeshoot::Vector& a, const timeshoot::Vector& b) {
  return a.size() == b.size() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

/// Parameter-free field from closures, for closed-form test dynamics.
class LambdaField final : public timeshoot::VectorField {
 public:
  using Eval = std::function<timeshoot::Vector(double, const timeshoot::Vector&)>;
  using Jac = std::function<timeshoot::Matrix(double, const timeshoot::Vector&)>;

  LambdaField(timeshoot::Index dim, Eval eval, Jac jac)
      : dim_(dim), eval_(std::move(eval)), jac_(std::move(jac)) {}

  timeshoot::Index dim() const override { return dim_; }
  timeshoot::Vector eval(double t, const timeshoot::Vector& z) const override { return eval_(t, z); }
  timeshoot::Matrix jac_z(double t, const timeshoot::Vector& z) const override { return jac_(t, z); }

 private:
  timeshoot::Index dim_;
  Eval eval_;
  Jac jac_;
};

/// z' = c for a constant vector c.
inline LambdaField constant_field(const timeshoot::Vector& c) {
  const timeshoot::Index n = c.size();
  return LambdaField(
      n, [c](double, const timeshoot::Vector&) { return c; },
      [n](double, const timeshoot::Vector&) { return timeshoot::Matrix::Zero(n, n).eval(); });
}

/// Scalar z' = a z.
inline timeshoot::LinearField scalar_field(double a) {
  return timeshoot::LinearField(timeshoot::Matrix::Constant(1, 1, a));
}

inline timeshoot::Vector vec(std::initializer_list<double> values) {
  timeshoot::Vector v(static_cast<timeshoot::Index>(values.size()));
  timeshoot::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

}  // namespace testing
