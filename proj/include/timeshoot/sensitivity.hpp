#pragma once

#include <vector>

#include "timeshoot/field.hpp"
#include "timeshoot/grid.hpp"
#include "timeshoot/ledger.hpp"
#include "timeshoot/ode.hpp"

namespace timeshoot {

/// How the sensitivity right-hand side (df/dz) V is formed.
enum class JmpMode {
  fused,    // one Jacobian-matrix product per stage
  columns,  // n_z Jacobian-vector products per stage
};

struct SensitivityOptions {
  JmpMode jmp = JmpMode::fused;
  /// Adaptive error control on the sensitivity components too. Off by
  /// default so the step sequence equals that of the plain state integration.
  bool control_sensitivity_error = false;
};

struct FlowSensitivity {
  Vector flow;
  Matrix sensitivity;
};

/// Flow phi(b) over `span` together with D phi(b), from one integration of
/// the coupled system z' = f(t, z), V' = (df/dz) V with V(start) = `seed`
/// (identity when null). Each stage shares one field evaluation between the
/// state and the sensitivity dynamics. A zero-length span returns (b, seed).
FlowSensitivity flow_with_sensitivity(const VectorField& field, const Vector& b, TimeSpan span,
                                      const SolverSpec& spec, NfeLedger* ledger = nullptr,
                                      const SensitivityOptions& options = {},
                                      const Matrix* seed = nullptr);

struct SensitivityResult {
  std::vector<Vector> flows;
  std::vector<Matrix> sensitivities;
};

/// Element-wise `flow_with_sensitivity`, run as one parallel stage.
SensitivityResult batch_flow_with_sensitivity(const VectorField& field,
                                              const std::vector<Vector>& b,
                                              const std::vector<TimeSpan>& spans,
                                              const SolverSpec& spec, NfeLedger* ledger = nullptr,
                                              const SensitivityOptions& options = {});

/// D phi(b) `direction` without forming D phi: integrates (z, v) with
/// v(start) = direction.
Vector sequential_jvp_correction(const VectorField& field, const Vector& b, TimeSpan span,
                                 const SolverSpec& spec, const Vector& direction,
                                 NfeLedger* ledger = nullptr);

namespace detail {

FlowSensitivity flow_with_sensitivity(const VectorField& field, const Vector& b, TimeSpan span,
                                      const SolverSpec& spec, EvalCounts& counts,
                                      const SensitivityOptions& options, const Matrix* seed);

Vector jvp_correction(const VectorField& field, const Vector& b, TimeSpan span,
                      const SolverSpec& spec, const Vector& direction, EvalCounts& counts);

}  // namespace detail

}  // namespace timeshoot
