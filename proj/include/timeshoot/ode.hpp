#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "timeshoot/field.hpp"
#include "timeshoot/grid.hpp"
#include "timeshoot/ledger.hpp"
#include "timeshoot/linalg.hpp"

namespace timeshoot {

enum class Method { euler, rk4, dopri5 };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

/// Solver configuration. Fixed-step methods take `step_count` equal steps
/// per integration span; dopri5 controls the local error to rtol |z| + atol.
struct SolverSpec {
  Method method = Method::rk4;
  int step_count = 1;
  double rtol = 1e-8;
  double atol = 1e-8;
  long max_steps = 1'000'000;

  static SolverSpec fixed(Method method, int steps);
  static SolverSpec adaptive(double rtol, double atol);

  bool is_fixed_step() const { return method != Method::dopri5; }
  /// Throws ConfigError when the fields are inconsistent with `method`.
  void validate() const;
};

/// Number of vector-field evaluations per fixed step.
int stage_count(Method method);

/// Ordered (time, state) samples. The first sample is the start of the span
/// and the last is the endpoint.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;

  const Vector& final_state() const { return states.back(); }
};

/// A first-order system y' = rhs(t, y) over flat vectors. The right-hand side
/// is responsible for its own evaluation accounting. When `error_dims` is
/// non-negative, adaptive error control only looks at the leading
/// `error_dims` components.
struct OdeSystem {
  std::function<void(double t, const Vector& y, Vector& dy)> rhs;
  Index error_dims = -1;
  std::string label = "state dynamics";
};

/// Integrates `system` from span.start to span.end (either direction),
/// recording the states at `samples` that lie strictly inside the span.
Trajectory integrate_system(const OdeSystem& system, const Vector& y0, TimeSpan span,
                            const SolverSpec& spec, std::span<const double> samples = {});

/// One explicit step of a fixed-step method.
Vector step_fixed(const VectorField& field, double t, const Vector& z, double h, Method method,
                  NfeLedger* ledger = nullptr);

/// Solution of z' = f(t, z), z(span.start) = z0, on span.start < span.end.
Trajectory integrate(const VectorField& field, const Vector& z0, TimeSpan span,
                     const SolverSpec& spec, NfeLedger* ledger = nullptr,
                     std::span<const double> samples = {});

/// Element-wise `integrate`, elements run on the worker pool. The ledger
/// receives the batch as one parallel stage.
std::vector<Trajectory> integrate_batch(const VectorField& field, const std::vector<Vector>& z0,
                                        const std::vector<TimeSpan>& spans,
                                        const SolverSpec& spec, NfeLedger* ledger = nullptr);

namespace detail {

/// Endpoint of `integrate` with raw counts instead of a ledger.
Vector flow(const VectorField& field, const Vector& z0, TimeSpan span, const SolverSpec& spec,
            EvalCounts& counts);

}  // namespace detail

}  // namespace timeshoot
