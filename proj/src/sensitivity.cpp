#include "timeshoot/sensitivity.hpp"

#include <string>

#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"

namespace timeshoot {
namespace detail {

FlowSensitivity flow_with_sensitivity(const VectorField& field, const Vector& b, TimeSpan span,
                                      const SolverSpec& spec, EvalCounts& counts,
                                      const SensitivityOptions& options, const Matrix* seed) {
  const Index n = field.dim();
  if (b.size() != n) {
    throw ConfigError("shooting parameter has dimension " + std::to_string(b.size()) +
                      ", field expects " + std::to_string(n));
  }
  const Matrix v0 = seed != nullptr ? *seed : Matrix::Identity(n, n);
  if (v0.rows() != n) throw ConfigError("sensitivity seed must have n_z rows");
  const Index m = v0.cols();
  if (span.start == span.end) return {b, v0};

  Vector y0(n + n * m);
  y0.head(n) = b;
  y0.tail(n * m) = Eigen::Map<const Vector>(v0.data(), n * m);

  OdeSystem sys;
  sys.label = "sensitivity dynamics";
  sys.error_dims = options.control_sensitivity_error ? -1 : n;
  const JmpMode mode = options.jmp;
  sys.rhs = [&field, &counts, n, m, mode](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    const Eigen::Map<const Matrix> v(y.data() + n, n, m);
    dy.resize(y.size());
    Eigen::Map<Matrix> dv(dy.data() + n, n, m);
    ++counts.nfe;
    if (mode == JmpMode::fused) {
      Vector f;
      Matrix jac;
      field.eval_with_jac(t, z, f, jac);
      dy.head(n) = f;
      dv.noalias() = jac * v;
      ++counts.jmp;
    } else {
      dy.head(n) = field.eval(t, z);
      for (Index c = 0; c < m; ++c) dv.col(c) = field.jvp_z(t, z, v.col(c));
      counts.jvp += m;
    }
  };

  const Vector y1 = integrate_system(sys, y0, span, spec).final_state();
  FlowSensitivity out;
  out.flow = y1.head(n);
  out.sensitivity = Eigen::Map<const Matrix>(y1.data() + n, n, m);
  return out;
}

Vector jvp_correction(const VectorField& field, const Vector& b, TimeSpan span,
                      const SolverSpec& spec, const Vector& direction, EvalCounts& counts) {
  const Index n = field.dim();
  if (b.size() != n || direction.size() != n) {
    throw ConfigError("jvp correction needs state and direction of dimension " + std::to_string(n));
  }
  if (span.start == span.end) return direction;

  Vector y0(2 * n);
  y0 << b, direction;
  OdeSystem sys;
  sys.label = "sensitivity dynamics";
  sys.error_dims = n;
  sys.rhs = [&field, &counts, n](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    dy.resize(2 * n);
    dy.head(n) = field.eval(t, z);
    dy.tail(n) = field.jvp_z(t, z, y.tail(n));
    ++counts.nfe;
    ++counts.jvp;
  };
  return integrate_system(sys, y0, span, spec).final_state().tail(n);
}

}  // namespace detail

FlowSensitivity flow_with_sensitivity(const VectorField& field, const Vector& b, TimeSpan span,
                                      const SolverSpec& spec, NfeLedger* ledger,
                                      const SensitivityOptions& options, const Matrix* seed) {
  if (span.end < span.start) throw ConfigError("sensitivity span must not run backward");
  EvalCounts counts;
  auto out = detail::flow_with_sensitivity(field, b, span, spec, counts, options, seed);
  if (ledger != nullptr) ledger->record_sequential(counts);
  return out;
}

SensitivityResult batch_flow_with_sensitivity(const VectorField& field,
                                              const std::vector<Vector>& b,
                                              const std::vector<TimeSpan>& spans,
                                              const SolverSpec& spec, NfeLedger* ledger,
                                              const SensitivityOptions& options) {
  if (b.empty()) throw ConfigError("sensitivity batch is empty");
  if (b.size() != spans.size()) {
    throw ConfigError("sensitivity batch needs as many spans as shooting parameters");
  }
  spec.validate();
  SensitivityResult out;
  out.flows.resize(b.size());
  out.sensitivities.resize(b.size());
  std::vector<EvalCounts> counts(b.size());
  parallel_for(b.size(), [&](std::size_t i) {
    if (spans[i].end < spans[i].start) throw ConfigError("sensitivity span must not run backward");
    auto fs = detail::flow_with_sensitivity(field, b[i], spans[i], spec, counts[i], options,
                                            nullptr);
    out.flows[i] = std::move(fs.flow);
    out.sensitivities[i] = std::move(fs.sensitivity);
  });
  if (ledger != nullptr) ledger->record_parallel(counts);
  return out;
}

Vector sequential_jvp_correction(const VectorField& field, const Vector& b, TimeSpan span,
                                 const SolverSpec& spec, const Vector& direction,
                                 NfeLedger* ledger) {
  if (span.end < span.start) throw ConfigError("sensitivity span must not run backward");
  EvalCounts counts;
  auto out = detail::jvp_correction(field, b, span, spec, direction, counts);
  if (ledger != nullptr) ledger->record_sequential(counts);
  return out;
}

}  // namespace timeshoot
