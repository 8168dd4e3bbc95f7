#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "timeshoot/field.hpp"
#include "timeshoot/grid.hpp"
#include "timeshoot/ledger.hpp"
#include "timeshoot/ode.hpp"
#include "timeshoot/sensitivity.hpp"

namespace timeshoot {

/// Shooting parameters b_0..b_N on a grid. b_0 is pinned to z0; rows below
/// `active_from` are converged and never touched again by the iterations.
struct ShootingState {
  TimeGrid grid;
  Vector z0;
  std::vector<Vector> b;
  std::size_t active_from = 1;
  int iteration = 0;

  std::size_t intervals() const { return grid.intervals(); }
  Index dim() const { return z0.size(); }
  /// (N+1) x n_z matrix with one shooting parameter per row.
  Matrix as_matrix() const;
};

enum class InitKind { coarse_rollout, fine_rollout, broadcast };

struct InitStrategy {
  InitKind kind = InitKind::broadcast;
  SolverSpec spec;

  static InitStrategy broadcast();
  /// One step of a fixed-step method per sub-interval, chained sequentially.
  static InitStrategy coarse(Method method);
  static InitStrategy fine(const SolverSpec& spec);
};

ShootingState init_shooting(const VectorField& field, const Vector& z0, const TimeGrid& grid,
                            const InitStrategy& strategy, NfeLedger* ledger = nullptr);

/// Sequential reference: b_{n+1} = phi_n(b_n) chained across the grid with `spec`.
std::vector<Vector> sequential_solve(const VectorField& field, const Vector& z0,
                                     const TimeGrid& grid, const SolverSpec& spec,
                                     NfeLedger* ledger = nullptr);

struct MatchResidual {
  std::vector<Vector> g;  // row 0 is b_0 - z0
  double norm_inf = 0.0;
};

/// g_n = b_n - phi_{n-1}(b_{n-1}) with all flows computed as one parallel stage.
MatchResidual matching_residual(const VectorField& field, const ShootingState& state,
                                const SolverSpec& spec, NfeLedger* ledger = nullptr);

enum class NewtonMode {
  fw_sensitivity,  // all D phi_n in one parallel batch alongside the flows
  sequential_jvp,  // flows in parallel, corrections as sequential jvp integrations
};

std::string_view to_string(NewtonMode mode);

/// One direct Newton sweep b_{n+1} <- phi_n(b_n) + D phi_n(b_n) (b_n^new - b_n)
/// over the active window; advances `active_from` by one.
ShootingState newton_direct_iteration(const VectorField& field, const ShootingState& state,
                                      const SolverSpec& spec, NewtonMode mode,
                                      NfeLedger* ledger = nullptr);

/// Newton sweep for several independent states sharing one field. The flows of
/// every (state, sub-interval) pair form a single parallel stage. When
/// `warm_residuals` is given it receives, per state, the infinity norm of the
/// matching residual over the active rows before the update; it comes from
/// the same flows at no extra cost.
void newton_direct_iteration(const VectorField& field, std::span<ShootingState> states,
                             const SolverSpec& spec, NewtonMode mode,
                             NfeLedger* ledger = nullptr,
                             std::vector<double>* warm_residuals = nullptr);

/// Parareal sweep b_{n+1} <- F_n(b_n) + G_n(b_n^new) - G_n(b_n) with a fine
/// solver F (parallel) and a fixed-step coarse solver G (sequential).
ShootingState parareal_iteration(const VectorField& field, const ShootingState& state,
                                 const SolverSpec& fine, const SolverSpec& coarse,
                                 NfeLedger* ledger = nullptr);

/// Block operator R = D gamma with R_{n+1,n} = blocks[n], all else zero.
Matrix assemble_shift_operator(const std::vector<Matrix>& blocks);

/// Damped Newton step B <- B - alpha (I - D gamma)^{-1} g on the assembled
/// dense system. Only for small problems: (N+1) n_z must not exceed `max_rows`.
ShootingState newton_dense_reference(const VectorField& field, const ShootingState& state,
                                     const SolverSpec& spec, double alpha,
                                     NfeLedger* ledger = nullptr, Index max_rows = 2000);

enum class RootMethod { newton_fw, newton_jvp, parareal, dense_ref };

std::string_view to_string(RootMethod method);
RootMethod parse_root_method(std::string_view name);

struct MslOptions {
  RootMethod method = RootMethod::newton_fw;
  SolverSpec fine = SolverSpec::fixed(Method::rk4, 1);
  SolverSpec coarse = SolverSpec::fixed(Method::rk4, 1);
  InitStrategy init = InitStrategy::broadcast();
  int max_iters = 1;
  double residual_tol = 1e-8;
};

struct IterationRecord {
  int iteration = 0;
  double residual_inf = 0.0;
  std::int64_t total_nfe = 0;
  std::int64_t span_nfe = 0;
  double wall_ms = 0.0;
};

struct SolveReport {
  ShootingState state;
  NfeLedger ledger;
  std::vector<IterationRecord> history;
};

/// Iterates the chosen root finder until norm_inf(g) <= residual_tol, the
/// iteration budget is spent, or every row is converged. The residual after
/// each iteration is evaluated with the fine solver and its cost is part of
/// the ledger.
SolveReport msl_solve(const VectorField& field, const Vector& z0, const TimeGrid& grid,
                      const MslOptions& options);
SolveReport msl_solve(const VectorField& field, ShootingState initial, const MslOptions& options);

/// CSV rows: iteration, residual_inf, total_nfe, span_nfe, wall_clock_ms.
void write_solve_summary(std::ostream& out, std::span<const IterationRecord> history,
                         std::string_view config_hash);

}  // namespace timeshoot
