#include "timeshoot/shooting.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <string>

#include <Eigen/LU>

#include "timeshoot/csv.hpp"
#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"

namespace timeshoot {

namespace {

void check_state(const VectorField& field, const ShootingState& state) {
  if (state.z0.size() != field.dim()) {
    throw ConfigError("initial condition has dimension " + std::to_string(state.z0.size()) +
                      ", field expects " + std::to_string(field.dim()));
  }
  if (state.b.size() != state.grid.node_count()) {
    throw ConfigError("shooting state has " + std::to_string(state.b.size()) +
                      " rows, grid has " + std::to_string(state.grid.node_count()) + " nodes");
  }
  for (const auto& row : state.b) {
    if (row.size() != field.dim()) throw ConfigError("shooting parameter dimension mismatch");
  }
}

void check_window(const ShootingState& state) {
  if (state.active_from < 1 || state.active_from > state.intervals()) {
    throw ConfigError("active_from " + std::to_string(state.active_from) +
                      " outside [1, " + std::to_string(state.intervals()) + "]");
  }
}

void check_rows_finite(const std::vector<Vector>& b, std::size_t from) {
  for (std::size_t n = from; n < b.size(); ++n) {
    if (!b[n].allFinite()) {
      throw NumericalBlowup("non-finite shooting parameter at node " + std::to_string(n));
    }
  }
}

}  // namespace

Matrix ShootingState::as_matrix() const {
  Matrix m(static_cast<Index>(b.size()), dim());
  for (std::size_t n = 0; n < b.size(); ++n) m.row(static_cast<Index>(n)) = b[n].transpose();
  return m;
}

InitStrategy InitStrategy::broadcast() { return {InitKind::broadcast, SolverSpec{}}; }

InitStrategy InitStrategy::coarse(Method method) {
  if (method == Method::dopri5) throw ConfigError("coarse rollout needs a fixed-step method");
  return {InitKind::coarse_rollout, SolverSpec::fixed(method, 1)};
}

InitStrategy InitStrategy::fine(const SolverSpec& spec) { return {InitKind::fine_rollout, spec}; }

std::vector<Vector> sequential_solve(const VectorField& field, const Vector& z0,
                                     const TimeGrid& grid, const SolverSpec& spec,
                                     NfeLedger* ledger) {
  if (z0.size() != field.dim()) throw ConfigError("initial condition dimension mismatch");
  spec.validate();
  std::vector<Vector> b(grid.node_count());
  b[0] = z0;
  EvalCounts counts;
  for (std::size_t n = 0; n < grid.intervals(); ++n) {
    b[n + 1] = detail::flow(field, b[n], grid.interval(n), spec, counts);
  }
  if (ledger != nullptr) ledger->record_sequential(counts);
  return b;
}

ShootingState init_shooting(const VectorField& field, const Vector& z0, const TimeGrid& grid,
                            const InitStrategy& strategy, NfeLedger* ledger) {
  if (z0.size() != field.dim()) throw ConfigError("initial condition dimension mismatch");
  ShootingState state{grid, z0, {}, 1, 0};
  if (strategy.kind == InitKind::broadcast) {
    state.b.assign(grid.node_count(), z0);
  } else {
    state.b = sequential_solve(field, z0, grid, strategy.spec, ledger);
  }
  return state;
}

MatchResidual matching_residual(const VectorField& field, const ShootingState& state,
                                const SolverSpec& spec, NfeLedger* ledger) {
  check_state(field, state);
  const std::size_t intervals = state.intervals();
  std::vector<Vector> starts(state.b.begin(), state.b.end() - 1);
  std::vector<TimeSpan> spans(intervals);
  for (std::size_t n = 0; n < intervals; ++n) spans[n] = state.grid.interval(n);
  const auto flows = integrate_batch(field, starts, spans, spec, ledger);

  MatchResidual out;
  out.g.resize(state.b.size());
  out.g[0] = state.b[0] - state.z0;
  out.norm_inf = out.g[0].lpNorm<Eigen::Infinity>();
  for (std::size_t n = 0; n < intervals; ++n) {
    out.g[n + 1] = state.b[n + 1] - flows[n].final_state();
    out.norm_inf = std::max(out.norm_inf, out.g[n + 1].lpNorm<Eigen::Infinity>());
  }
  return out;
}

std::string_view to_string(NewtonMode mode) {
  return mode == NewtonMode::fw_sensitivity ? "fw_sensitivity" : "sequential_jvp";
}

void newton_direct_iteration(const VectorField& field, std::span<ShootingState> states,
                             const SolverSpec& spec, NewtonMode mode, NfeLedger* ledger,
                             std::vector<double>* warm_residuals) {
  spec.validate();
  struct Item {
    std::size_t state;
    std::size_t interval;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < states.size(); ++s) {
    check_state(field, states[s]);
    check_window(states[s]);
    for (std::size_t n = states[s].active_from - 1; n < states[s].intervals(); ++n) {
      items.push_back({s, n});
    }
  }
  if (warm_residuals != nullptr) warm_residuals->assign(states.size(), 0.0);
  if (items.empty()) return;

  // Stage 1: flows (and sensitivities) of every active sub-interval.
  std::vector<FlowSensitivity> results(items.size());
  std::vector<EvalCounts> counts(items.size());
  const SensitivityOptions options{};
  parallel_for(items.size(), [&](std::size_t i) {
    const ShootingState& st = states[items[i].state];
    const std::size_t n = items[i].interval;
    if (mode == NewtonMode::fw_sensitivity) {
      results[i] = detail::flow_with_sensitivity(field, st.b[n], st.grid.interval(n), spec,
                                                 counts[i], options, nullptr);
    } else {
      results[i].flow = detail::flow(field, st.b[n], st.grid.interval(n), spec, counts[i]);
    }
  });
  if (ledger != nullptr) ledger->record_parallel(counts);
  if (warm_residuals != nullptr) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const Vector& next = states[items[i].state].b[items[i].interval + 1];
      double& r = (*warm_residuals)[items[i].state];
      r = std::max(r, (next - results[i].flow).lpNorm<Eigen::Infinity>());
    }
  }

  // Stage 2: sequential sweep in n, independent across states.
  std::vector<std::size_t> first_item(states.size());
  for (std::size_t i = items.size(); i-- > 0;) first_item[items[i].state] = i;
  std::vector<EvalCounts> sweep_counts(states.size());
  parallel_for(states.size(), [&](std::size_t s) {
    ShootingState& st = states[s];
    const std::vector<Vector> old_b = st.b;
    std::size_t i = first_item[s];
    for (std::size_t n = st.active_from - 1; n < st.intervals(); ++n, ++i) {
      const Vector delta = st.b[n] - old_b[n];
      if (n + 1 == st.active_from || delta.isZero(0.0)) {
        st.b[n + 1] = results[i].flow;
      } else if (mode == NewtonMode::fw_sensitivity) {
        st.b[n + 1] = results[i].flow + results[i].sensitivity * delta;
      } else {
        st.b[n + 1] = results[i].flow + detail::jvp_correction(field, old_b[n],
                                                               st.grid.interval(n), spec, delta,
                                                               sweep_counts[s]);
      }
      if (!st.b[n + 1].allFinite()) {
        throw NumericalBlowup("non-finite shooting parameter at node " + std::to_string(n + 1));
      }
    }
    ++st.active_from;
    ++st.iteration;
  });
  if (ledger != nullptr && mode == NewtonMode::sequential_jvp) {
    ledger->record_parallel(sweep_counts);
  }
}

ShootingState newton_direct_iteration(const VectorField& field, const ShootingState& state,
                                      const SolverSpec& spec, NewtonMode mode,
                                      NfeLedger* ledger) {
  ShootingState next = state;
  newton_direct_iteration(field, std::span<ShootingState>(&next, 1), spec, mode, ledger);
  return next;
}

ShootingState parareal_iteration(const VectorField& field, const ShootingState& state,
                                 const SolverSpec& fine, const SolverSpec& coarse,
                                 NfeLedger* ledger) {
  if (!coarse.is_fixed_step()) throw ConfigError("parareal coarse solver must be fixed-step");
  fine.validate();
  coarse.validate();
  check_state(field, state);
  check_window(state);

  const std::size_t first = state.active_from - 1;
  const std::size_t count = state.intervals() - first;
  std::vector<Vector> fine_flow(count);
  std::vector<Vector> coarse_flow(count);
  std::vector<EvalCounts> counts(count);
  parallel_for(count, [&](std::size_t i) {
    const std::size_t n = first + i;
    fine_flow[i] = detail::flow(field, state.b[n], state.grid.interval(n), fine, counts[i]);
    coarse_flow[i] = detail::flow(field, state.b[n], state.grid.interval(n), coarse, counts[i]);
  });
  if (ledger != nullptr) ledger->record_parallel(counts);

  ShootingState next = state;
  EvalCounts sweep;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n = first + i;
    if (i == 0 || (next.b[n] - state.b[n]).isZero(0.0)) {
      next.b[n + 1] = fine_flow[i];
    } else {
      const Vector moved = detail::flow(field, next.b[n], state.grid.interval(n), coarse, sweep);
      next.b[n + 1] = fine_flow[i] + (moved - coarse_flow[i]);
    }
  }
  if (ledger != nullptr) ledger->record_sequential(sweep);
  check_rows_finite(next.b, first + 1);
  ++next.active_from;
  ++next.iteration;
  return next;
}

Matrix assemble_shift_operator(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw ConfigError("shift operator needs at least one block");
  const Index nz = blocks.front().rows();
  const Index rows = static_cast<Index>(blocks.size() + 1) * nz;
  Matrix r = Matrix::Zero(rows, rows);
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    if (blocks[n].rows() != nz || blocks[n].cols() != nz) {
      throw ConfigError("shift operator blocks must be square and equal-sized");
    }
    const Index k = static_cast<Index>(n);
    r.block((k + 1) * nz, k * nz, nz, nz) = blocks[n];
  }
  return r;
}

ShootingState newton_dense_reference(const VectorField& field, const ShootingState& state,
                                     const SolverSpec& spec, double alpha, NfeLedger* ledger,
                                     Index max_rows) {
  check_state(field, state);
  const std::size_t intervals = state.intervals();
  const Index nz = state.dim();
  const Index rows = static_cast<Index>(intervals + 1) * nz;
  if (rows > max_rows) {
    throw SizeGuardError("dense Newton system has " + std::to_string(rows) +
                         " rows, guard is " + std::to_string(max_rows));
  }
  std::vector<Vector> starts(state.b.begin(), state.b.end() - 1);
  std::vector<TimeSpan> spans(intervals);
  for (std::size_t n = 0; n < intervals; ++n) spans[n] = state.grid.interval(n);
  const auto sens = batch_flow_with_sensitivity(field, starts, spans, spec, ledger);

  Vector g(rows);
  g.head(nz) = state.b[0] - state.z0;
  for (std::size_t n = 0; n < intervals; ++n) {
    g.segment(static_cast<Index>(n + 1) * nz, nz) = state.b[n + 1] - sens.flows[n];
  }
  const Matrix system = Matrix::Identity(rows, rows) - assemble_shift_operator(sens.sensitivities);
  const Vector step = system.partialPivLu().solve(g);

  ShootingState next = state;
  for (std::size_t n = 0; n <= intervals; ++n) {
    next.b[n] = state.b[n] - alpha * step.segment(static_cast<Index>(n) * nz, nz);
  }
  check_rows_finite(next.b, 0);
  if (alpha == 1.0) next.active_from = std::min(next.active_from + 1, intervals + 1);
  ++next.iteration;
  return next;
}

std::string_view to_string(RootMethod method) {
  switch (method) {
    case RootMethod::newton_fw: return "newton-fw";
    case RootMethod::newton_jvp: return "newton-jvp";
    case RootMethod::parareal: return "parareal";
    case RootMethod::dense_ref: return "dense-ref";
  }
  return "unknown";
}

RootMethod parse_root_method(std::string_view name) {
  for (auto m : {RootMethod::newton_fw, RootMethod::newton_jvp, RootMethod::parareal,
                 RootMethod::dense_ref}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown root method '" + std::string(name) +
                    "' (expected newton-fw, newton-jvp, parareal or dense-ref)");
}

SolveReport msl_solve(const VectorField& field, ShootingState initial, const MslOptions& options) {
  if (options.max_iters < 1) throw ConfigError("max_iters must be at least 1");
  check_state(field, initial);
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  SolveReport report{std::move(initial), {}, {}};
  ShootingState& state = report.state;
  const std::size_t intervals = state.intervals();

  for (int k = 0; k < options.max_iters && state.active_from <= intervals; ++k) {
    switch (options.method) {
      case RootMethod::newton_fw:
        state = newton_direct_iteration(field, state, options.fine, NewtonMode::fw_sensitivity,
                                        &report.ledger);
        break;
      case RootMethod::newton_jvp:
        state = newton_direct_iteration(field, state, options.fine, NewtonMode::sequential_jvp,
                                        &report.ledger);
        break;
      case RootMethod::parareal:
        state = parareal_iteration(field, state, options.fine, options.coarse, &report.ledger);
        break;
      case RootMethod::dense_ref:
        state = newton_dense_reference(field, state, options.fine, 1.0, &report.ledger);
        break;
    }
    const double residual = matching_residual(field, state, options.fine, &report.ledger).norm_inf;
    const double ms =
        std::chrono::duration<double, std::milli>(clock::now() - started).count();
    report.history.push_back({state.iteration, residual, report.ledger.total_nfe(),
                              report.ledger.span_nfe(), ms});
    if (residual <= options.residual_tol) break;
  }
  return report;
}

SolveReport msl_solve(const VectorField& field, const Vector& z0, const TimeGrid& grid,
                      const MslOptions& options) {
  NfeLedger init_ledger;
  ShootingState initial = init_shooting(field, z0, grid, options.init, &init_ledger);
  SolveReport report = msl_solve(field, std::move(initial), options);
  init_ledger.append(report.ledger);
  report.ledger = init_ledger;
  return report;
}

void write_solve_summary(std::ostream& out, std::span<const IterationRecord> history,
                         std::string_view hash) {
  CsvWriter csv(out, {"iteration", "residual_inf", "total_nfe", "span_nfe", "wall_clock_ms"},
                hash);
  for (const auto& rec : history) {
    csv.cell(rec.iteration).cell(rec.residual_inf).cell(rec.total_nfe).cell(rec.span_nfe)
        .cell(rec.wall_ms);
    csv.end_row();
  }
}

}  // namespace timeshoot
