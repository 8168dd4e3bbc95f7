#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "timeshoot/field.hpp"
#include "timeshoot/ledger.hpp"
#include "timeshoot/ode.hpp"
#include "timeshoot/shooting.hpp"

namespace timeshoot {

enum class GradientMethod { interpolated_adjoint, implicit, finite_difference };

std::string_view to_string(GradientMethod method);

struct GradientReport {
  Vector grad;
  GradientMethod method = GradientMethod::interpolated_adjoint;
  /// Matching residual of the state the gradient was taken at; NaN when unchecked.
  double residual_inf = std::numeric_limits<double>::quiet_NaN();
  /// Spline interpolation error estimate; NaN when not applicable.
  double spline_error_estimate = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> fd_relative_error;
  /// Costate at t_0, i.e. dL/dz0. Empty for finite differences.
  Vector initial_costate;
};

struct AdjointOptions {
  SolverSpec backward = SolverSpec::adaptive(1e-7, 1e-7);
  /// Solver used for the convergence check of the state.
  SolverSpec forward = SolverSpec::adaptive(1e-8, 1e-8);
  /// Largest matching residual accepted before StaleSolutionError.
  double residual_tol = 1e-6;
  bool check_residual = true;
  /// Start the backward pass at the last node with a nonzero cost gradient.
  bool skip_zero_tail = true;
};

/// dL/dtheta for L = sum_n c(b_n) at a converged state. `node_grads[n]` is
/// dc/db_n. The costate runs backward along a natural cubic spline through
/// the shooting parameters, jumping by node_grads[n] at every node.
GradientReport interpolated_adjoint_grad(const VectorField& field, const ShootingState& state,
                                         const std::vector<Vector>& node_grads,
                                         const AdjointOptions& options = {},
                                         NfeLedger* ledger = nullptr);

/// v^T = c^T (I + R + ... + R^N) with R the block shift of `blocks`, using
/// only block products. `c` has one entry per node.
std::vector<Vector> nilpotent_series_apply(const std::vector<Matrix>& blocks,
                                           const std::vector<Vector>& c);

/// dL/dtheta by implicit differentiation of g(B*) = 0. `loss_grad` holds
/// dL/db_n for every node. Sub-interval parameter cotangents are computed
/// concurrently and summed in node order.
GradientReport implicit_gradient(const VectorField& field, const ShootingState& state,
                                 const SolverSpec& spec, const std::vector<Vector>& loss_grad,
                                 const AdjointOptions& options = {}, NfeLedger* ledger = nullptr);

/// Central differences of `objective` over every parameter of `field`. The
/// parameters are restored before returning.
GradientReport finite_difference_grad(VectorField& field, const std::function<double()>& objective,
                                      double step);

/// Central differences of loss(B) with B from a sequential solve with `spec`.
GradientReport finite_difference_grad(VectorField& field, const Vector& z0, const TimeGrid& grid,
                                      const std::function<double(const std::vector<Vector>&)>& loss,
                                      const SolverSpec& spec, double step);

/// ||a - b|| / max(||b||, tiny).
double relative_error(const Vector& a, const Vector& b);

/// CSV rows: method, grad_norm, max_component, fd_relative_error.
void write_gradient_reports(std::ostream& out, std::span<const GradientReport> reports,
                            std::string_view config_hash);

}  // namespace timeshoot
