#include "timeshoot/adjoint.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "timeshoot/csv.hpp"
#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"
#include "timeshoot/spline.hpp"

namespace timeshoot {

namespace {

void check_node_vectors(const ShootingState& state, const std::vector<Vector>& v,
                        const char* what) {
  if (v.size() != state.b.size()) {
    throw ConfigError(std::string(what) + " has " + std::to_string(v.size()) +
                      " entries, expected " + std::to_string(state.b.size()));
  }
  for (const auto& row : v) {
    if (row.size() != state.dim()) {
      throw ConfigError(std::string(what) + " entry has wrong dimension");
    }
  }
}

double checked_residual(const VectorField& field, const ShootingState& state,
                        const AdjointOptions& options, NfeLedger* ledger) {
  if (!options.check_residual) return std::numeric_limits<double>::quiet_NaN();
  const double r = matching_residual(field, state, options.forward, ledger).norm_inf;
  if (!(r <= options.residual_tol)) {
    throw StaleSolutionError("shooting state is not converged: residual " + format_double(r) +
                             " exceeds " + format_double(options.residual_tol));
  }
  return r;
}

}  // namespace

std::string_view to_string(GradientMethod method) {
  switch (method) {
    case GradientMethod::interpolated_adjoint: return "interpolated_adjoint";
    case GradientMethod::implicit: return "implicit";
    case GradientMethod::finite_difference: return "finite_difference";
  }
  return "unknown";
}

GradientReport interpolated_adjoint_grad(const VectorField& field, const ShootingState& state,
                                         const std::vector<Vector>& node_grads,
                                         const AdjointOptions& options, NfeLedger* ledger) {
  check_node_vectors(state, node_grads, "node cost gradient list");
  options.backward.validate();
  GradientReport report;
  report.method = GradientMethod::interpolated_adjoint;
  report.residual_inf = checked_residual(field, state, options, ledger);

  const std::vector<double>& knots = state.grid.nodes();
  const CubicSpline spline(knots, state.b);
  report.spline_error_estimate = spline_error_estimate(knots, state.b);

  const Index nz = state.dim();
  const Index np = field.param_count();
  std::size_t last = state.intervals();
  if (options.skip_zero_tail) {
    while (last > 0 && node_grads[last].isZero(0.0)) --last;
  }

  Vector y = Vector::Zero(nz + np);
  y.head(nz) = node_grads[last];
  EvalCounts counts;
  Vector z(nz);
  Vector wz;
  Vector wtheta;
  OdeSystem sys;
  sys.label = "adjoint dynamics";
  sys.rhs = [&](double t, const Vector& yy, Vector& dy) {
    spline.value_into(t, z);
    field.vjp(t, z, yy.head(nz), wz, wtheta);
    dy.resize(nz + np);
    dy.head(nz) = -wz;
    if (np > 0) dy.tail(np) = -wtheta;
    ++counts.nfe;
  };
  for (std::size_t n = last; n-- > 0;) {
    y = integrate_system(sys, y, {knots[n + 1], knots[n]}, options.backward).final_state();
    y.head(nz) += node_grads[n];
  }
  if (ledger != nullptr) ledger->record_sequential(counts);
  if (!y.allFinite()) throw NumericalBlowup("non-finite value in adjoint dynamics");
  report.grad = y.tail(np);
  report.initial_costate = y.head(nz);
  return report;
}

std::vector<Vector> nilpotent_series_apply(const std::vector<Matrix>& blocks,
                                           const std::vector<Vector>& c) {
  const std::size_t nodes = blocks.size() + 1;
  if (c.size() != nodes) throw ConfigError("series cotangent needs one entry per node");
  std::vector<Vector> v = c;
  std::vector<Vector> term = c;
  std::vector<Vector> next(nodes);
  // (term R)_n = blocks[n]^T term_{n+1}; the product vanishes after N shifts.
  for (std::size_t power = 1; power < nodes; ++power) {
    for (std::size_t n = 0; n + 1 < nodes; ++n) next[n] = blocks[n].transpose() * term[n + 1];
    next[nodes - 1] = Vector::Zero(c[nodes - 1].size());
    std::swap(term, next);
    for (std::size_t n = 0; n < nodes; ++n) v[n] += term[n];
  }
  return v;
}

GradientReport implicit_gradient(const VectorField& field, const ShootingState& state,
                                 const SolverSpec& spec, const std::vector<Vector>& loss_grad,
                                 const AdjointOptions& options, NfeLedger* ledger) {
  check_node_vectors(state, loss_grad, "loss gradient");
  options.backward.validate();
  GradientReport report;
  report.method = GradientMethod::implicit;
  report.residual_inf = checked_residual(field, state, options, ledger);

  const std::size_t intervals = state.intervals();
  std::vector<Vector> starts(state.b.begin(), state.b.end() - 1);
  std::vector<TimeSpan> spans(intervals);
  for (std::size_t n = 0; n < intervals; ++n) spans[n] = state.grid.interval(n);
  const auto sens = batch_flow_with_sensitivity(field, starts, spans, spec, ledger);
  const std::vector<Vector> v = nilpotent_series_apply(sens.sensitivities, loss_grad);

  const Index nz = state.dim();
  const Index np = field.param_count();
  std::vector<Vector> parts(intervals, Vector::Zero(np));
  std::vector<EvalCounts> counts(intervals);
  parallel_for(intervals, [&](std::size_t n) {
    if (v[n + 1].isZero(0.0) || np == 0) return;
    Vector y(2 * nz + np);
    y << sens.flows[n], v[n + 1], Vector::Zero(np);
    OdeSystem sys;
    sys.label = "adjoint dynamics";
    EvalCounts& cnt = counts[n];
    sys.rhs = [&field, &cnt, nz, np](double t, const Vector& yy, Vector& dy) {
      const Vector z = yy.head(nz);
      Vector wz;
      Vector wtheta;
      field.vjp(t, z, yy.segment(nz, nz), wz, wtheta);
      dy.resize(2 * nz + np);
      dy.head(nz) = field.eval(t, z);
      dy.segment(nz, nz) = -wz;
      dy.tail(np) = -wtheta;
      ++cnt.nfe;
    };
    const TimeSpan span = state.grid.interval(n);
    parts[n] = integrate_system(sys, y, {span.end, span.start}, options.backward)
                   .final_state()
                   .tail(np);
  });
  if (ledger != nullptr) ledger->record_parallel(counts);

  report.grad = Vector::Zero(np);
  for (const auto& p : parts) report.grad += p;
  if (!report.grad.allFinite()) throw NumericalBlowup("non-finite value in implicit gradient");
  report.initial_costate = v[0];
  return report;
}

GradientReport finite_difference_grad(VectorField& field, const std::function<double()>& objective,
                                      double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  const Vector theta = field.params();
  GradientReport report;
  report.method = GradientMethod::finite_difference;
  report.grad = Vector::Zero(theta.size());
  try {
    for (Index i = 0; i < theta.size(); ++i) {
      Vector shifted = theta;
      shifted[i] = theta[i] + step;
      field.set_params(shifted);
      const double up = objective();
      shifted[i] = theta[i] - step;
      field.set_params(shifted);
      const double down = objective();
      report.grad[i] = (up - down) / (2.0 * step);
    }
  } catch (...) {
    field.set_params(theta);
    throw;
  }
  field.set_params(theta);
  return report;
}

GradientReport finite_difference_grad(VectorField& field, const Vector& z0, const TimeGrid& grid,
                                      const std::function<double(const std::vector<Vector>&)>& loss,
                                      const SolverSpec& spec, double step) {
  return finite_difference_grad(
      field, [&] { return loss(sequential_solve(field, z0, grid, spec)); }, step);
}

double relative_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), std::numeric_limits<double>::min());
}

void write_gradient_reports(std::ostream& out, std::span<const GradientReport> reports,
                            std::string_view hash) {
  CsvWriter csv(out, {"method", "grad_norm", "max_component", "fd_relative_error"}, hash);
  for (const auto& r : reports) {
    csv.cell(to_string(r.method)).cell(r.grad.norm());
    csv.cell(r.grad.size() > 0 ? r.grad.lpNorm<Eigen::Infinity>() : 0.0);
    if (r.fd_relative_error) {
      csv.cell(*r.fd_relative_error);
    } else {
      csv.cell(std::string_view(""));
    }
    csv.end_row();
  }
}

}  // namespace timeshoot
