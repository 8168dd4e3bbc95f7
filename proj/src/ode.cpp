#include "timeshoot/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"

namespace timeshoot {

std::string_view to_string(Method method) {
  switch (method) {
    case Method::euler:
      return "euler";
    case Method::rk4:
      return "rk4";
    case Method::dopri5:
      return "dopri5";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw ConfigError("unknown solver method '" + std::string(name) + "'");
}

SolverSpec SolverSpec::fixed(Method method, int steps) {
  SolverSpec spec;
  spec.method = method;
  spec.step_count = steps;
  spec.validate();
  return spec;
}

SolverSpec SolverSpec::adaptive(double rtol, double atol) {
  SolverSpec spec;
  spec.method = Method::dopri5;
  spec.rtol = rtol;
  spec.atol = atol;
  spec.validate();
  return spec;
}

void SolverSpec::validate() const {
  if (is_fixed_step()) {
    if (step_count < 1) throw ConfigError("fixed-step solver needs step_count >= 1");
  } else {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("dopri5 needs rtol > 0 and atol > 0");
    if (max_steps < 1) throw ConfigError("dopri5 needs max_steps >= 1");
  }
}

int stage_count(Method method) {
  switch (method) {
    case Method::euler:
      return 1;
    case Method::rk4:
      return 4;
    case Method::dopri5:
      return 6;
  }
  return 0;
}

namespace {

void check_finite(const Vector& y, double t, const std::string& label) {
  if (!y.allFinite()) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "non-finite value in " << label << " at t=" << t;
    throw NumericalBlowup(msg.str());
  }
}

/// Sample times strictly inside the span, ordered along the integration direction.
std::vector<double> interior_samples(std::span<const double> samples, TimeSpan span) {
  const double lo = std::min(span.start, span.end);
  const double hi = std::max(span.start, span.end);
  std::vector<double> inside;
  for (double s : samples) {
    if (s > lo && s < hi) inside.push_back(s);
  }
  if (span.end >= span.start) {
    std::sort(inside.begin(), inside.end());
  } else {
    std::sort(inside.begin(), inside.end(), std::greater<>());
  }
  inside.erase(std::unique(inside.begin(), inside.end()), inside.end());
  return inside;
}

struct StageWork {
  explicit StageWork(Index n) {
    for (auto* k : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &tmp}) k->resize(n);
  }
  Vector k1, k2, k3, k4, k5, k6, k7, tmp;
};

void rk_step(const OdeSystem& sys, double t, const Vector& y, double h, Method method,
             StageWork& w, Vector& out) {
  switch (method) {
    case Method::euler:
      sys.rhs(t, y, w.k1);
      out = y + h * w.k1;
      return;
    case Method::rk4:
      sys.rhs(t, y, w.k1);
      w.tmp = y + (0.5 * h) * w.k1;
      sys.rhs(t + 0.5 * h, w.tmp, w.k2);
      w.tmp = y + (0.5 * h) * w.k2;
      sys.rhs(t + 0.5 * h, w.tmp, w.k3);
      w.tmp = y + h * w.k3;
      sys.rhs(t + h, w.tmp, w.k4);
      out = y + (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
      return;
    case Method::dopri5:
      break;
  }
  throw ConfigError("dopri5 has no fixed-step form");
}

Trajectory integrate_fixed(const OdeSystem& sys, const Vector& y0, TimeSpan span,
                           const SolverSpec& spec, const std::vector<double>& samples) {
  Trajectory traj;
  traj.times.push_back(span.start);
  traj.states.push_back(y0);

  StageWork work(y0.size());
  const int steps = spec.step_count;
  const double h = span.length() / static_cast<double>(steps);
  const bool forward = span.end >= span.start;
  auto before = [forward](double a, double b) { return forward ? a < b : a > b; };

  Vector y = y0;
  Vector next(y0.size());
  double t = span.start;
  std::size_t s = 0;
  for (int k = 0; k < steps; ++k) {
    const double t_next = (k + 1 == steps) ? span.end : span.start + (k + 1) * h;
    while (s < samples.size() && before(samples[s], t_next)) {
      rk_step(sys, t, y, samples[s] - t, spec.method, work, next);
      y.swap(next);
      t = samples[s];
      check_finite(y, t, sys.label);
      traj.times.push_back(t);
      traj.states.push_back(y);
      ++s;
    }
    rk_step(sys, t, y, t_next - t, spec.method, work, next);
    y.swap(next);
    t = t_next;
    check_finite(y, t, sys.label);
    if (s < samples.size() && samples[s] == t_next) {
      traj.times.push_back(t);
      traj.states.push_back(y);
      ++s;
    }
  }
  traj.times.push_back(span.end);
  traj.states.push_back(y);
  return traj;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

class ErrorScale {
 public:
  ErrorScale(const SolverSpec& spec, Index dims) : rtol_(spec.rtol), atol_(spec.atol), dims_(dims) {}

  Index dims() const { return dims_; }

  double sk(double a, double b) const {
    return atol_ + rtol_ * std::max(std::abs(a), std::abs(b));
  }

  /// RMS of err_i / sk(y_i, ynew_i) over the controlled components.
  double norm(const Vector& err, const Vector& y, const Vector& ynew) const {
    double sum = 0.0;
    for (Index i = 0; i < dims_; ++i) {
      const double r = err[i] / sk(y[i], ynew[i]);
      sum += r * r;
    }
    return std::sqrt(sum / static_cast<double>(dims_));
  }

 private:
  double rtol_;
  double atol_;
  Index dims_;
};

/// Starting step heuristic of Hairer, Norsett & Wanner (order 5). Costs one
/// extra evaluation.
double initial_step(const OdeSystem& sys, double t, const Vector& y, const Vector& f0,
                    double dir, double hmax, const ErrorScale& scale, StageWork& w) {
  double dnf = 0.0;
  double dny = 0.0;
  for (Index i = 0; i < scale.dims(); ++i) {
    const double sk = scale.sk(y[i], y[i]);
    dnf += (f0[i] / sk) * (f0[i] / sk);
    dny += (y[i] / sk) * (y[i] / sk);
  }
  double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
  h = std::min(h, hmax);

  w.tmp = y + (dir * h) * f0;
  sys.rhs(t + dir * h, w.tmp, w.k2);
  double der2 = 0.0;
  for (Index i = 0; i < scale.dims(); ++i) {
    const double sk = scale.sk(y[i], y[i]);
    const double d = (w.k2[i] - f0[i]) / sk;
    der2 += d * d;
  }
  der2 = std::sqrt(der2) / h;
  const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
  const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 1.0 / 5.0);
  h = std::min({100.0 * h, h1, hmax});
  return dir * h;
}

Trajectory integrate_dopri5(const OdeSystem& sys, const Vector& y0, TimeSpan span,
                            const SolverSpec& spec, const std::vector<double>& samples) {
  Trajectory traj;
  traj.times.push_back(span.start);
  traj.states.push_back(y0);

  const Index n = y0.size();
  const Index dims = sys.error_dims < 0 ? n : std::min(sys.error_dims, n);
  const ErrorScale scale(spec, dims);
  StageWork w(n);

  constexpr double safe = 0.9;
  constexpr double beta = 0.04;
  constexpr double expo1 = 0.2 - beta * 0.75;
  constexpr double facc1 = 1.0 / 0.2;  // largest step decrease
  constexpr double facc2 = 1.0 / 10.0;  // largest step increase
  const double eps = std::numeric_limits<double>::epsilon();

  const double dir = span.end >= span.start ? 1.0 : -1.0;
  const double hmax = std::abs(span.length());

  Vector y = y0;
  Vector ynew(n);
  Vector err(n);
  double t = span.start;
  sys.rhs(t, y, w.k1);
  double h = initial_step(sys, t, y, w.k1, dir, hmax, scale, w);

  double facold = 1e-4;
  bool last_rejected = false;
  std::size_t s = 0;
  long attempts = 0;

  while (t != span.end) {
    if (++attempts > spec.max_steps) {
      std::ostringstream msg;
      msg << "dopri5 exceeded " << spec.max_steps << " steps in " << sys.label << " at t=" << t;
      throw StiffnessFailure(msg.str());
    }
    const bool to_sample = s < samples.size();
    const double target = to_sample ? samples[s] : span.end;
    bool hits = false;
    if ((t + h - target) * dir >= 0.0) {
      h = target - t;
      hits = true;
    }
    if (std::abs(h) <= 16.0 * eps * std::max(std::abs(t), 1.0)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "dopri5 step size underflow in " << sys.label << " at t=" << t;
      throw StiffnessFailure(msg.str());
    }

    w.tmp = y + h * (a21 * w.k1);
    sys.rhs(t + c2 * h, w.tmp, w.k2);
    w.tmp = y + h * (a31 * w.k1 + a32 * w.k2);
    sys.rhs(t + c3 * h, w.tmp, w.k3);
    w.tmp = y + h * (a41 * w.k1 + a42 * w.k2 + a43 * w.k3);
    sys.rhs(t + c4 * h, w.tmp, w.k4);
    w.tmp = y + h * (a51 * w.k1 + a52 * w.k2 + a53 * w.k3 + a54 * w.k4);
    sys.rhs(t + c5 * h, w.tmp, w.k5);
    w.tmp = y + h * (a61 * w.k1 + a62 * w.k2 + a63 * w.k3 + a64 * w.k4 + a65 * w.k5);
    const double t_new = hits ? target : t + h;
    sys.rhs(t_new, w.tmp, w.k6);
    ynew = y + h * (a71 * w.k1 + a73 * w.k3 + a74 * w.k4 + a75 * w.k5 + a76 * w.k6);
    sys.rhs(t_new, ynew, w.k7);
    err = h * (e1 * w.k1 + e3 * w.k3 + e4 * w.k4 + e5 * w.k5 + e6 * w.k6 + e7 * w.k7);

    const double e = scale.norm(err, y, ynew);
    if (!std::isfinite(e)) {
      // Trial step left the region where the field is finite; retry smaller.
      h *= 0.1;
      last_rejected = true;
      continue;
    }
    const double fac11 = std::pow(e, expo1);
    if (e <= 1.0) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(facc2, std::min(facc1, fac / safe));
      double hnew = h / fac;
      facold = std::max(e, 1e-4);
      t = t_new;
      y.swap(ynew);
      w.k1.swap(w.k7);
      check_finite(y, t, sys.label);
      if (hits && to_sample) {
        traj.times.push_back(t);
        traj.states.push_back(y);
        ++s;
      }
      if (std::abs(hnew) > hmax) hnew = dir * hmax;
      if (last_rejected) hnew = dir * std::min(std::abs(hnew), std::abs(h));
      last_rejected = false;
      h = hnew;
    } else {
      h /= std::min(facc1, fac11 / safe);
      last_rejected = true;
    }
  }
  traj.times.push_back(span.end);
  traj.states.push_back(y);
  return traj;
}

OdeSystem field_system(const VectorField& field, EvalCounts& counts) {
  OdeSystem sys;
  sys.rhs = [&field, &counts](double t, const Vector& z, Vector& dz) {
    dz = field.eval(t, z);
    ++counts.nfe;
  };
  return sys;
}

void check_field_input(const VectorField& field, const Vector& z0) {
  if (z0.size() != field.dim()) {
    throw ConfigError("state has dimension " + std::to_string(z0.size()) + ", field expects " +
                      std::to_string(field.dim()));
  }
}

}  // namespace

Trajectory integrate_system(const OdeSystem& system, const Vector& y0, TimeSpan span,
                            const SolverSpec& spec, std::span<const double> samples) {
  spec.validate();
  const auto inside = interior_samples(samples, span);
  if (span.start == span.end) {
    return Trajectory{{span.start, span.end}, {y0, y0}};
  }
  if (spec.is_fixed_step()) return integrate_fixed(system, y0, span, spec, inside);
  return integrate_dopri5(system, y0, span, spec, inside);
}

Vector step_fixed(const VectorField& field, double t, const Vector& z, double h, Method method,
                  NfeLedger* ledger) {
  if (method == Method::dopri5) throw ConfigError("step_fixed needs a fixed-step method");
  if (!(h > 0.0)) throw ConfigError("step_fixed needs h > 0");
  check_field_input(field, z);
  EvalCounts counts;
  const OdeSystem sys = field_system(field, counts);
  StageWork work(z.size());
  Vector out(z.size());
  rk_step(sys, t, z, h, method, work, out);
  check_finite(out, t + h, sys.label);
  if (ledger != nullptr) ledger->record_sequential(counts);
  return out;
}

Trajectory integrate(const VectorField& field, const Vector& z0, TimeSpan span,
                     const SolverSpec& spec, NfeLedger* ledger, std::span<const double> samples) {
  if (!(span.start < span.end)) throw ConfigError("integrate needs t_a < t_b");
  check_field_input(field, z0);
  EvalCounts counts;
  auto traj = integrate_system(field_system(field, counts), z0, span, spec, samples);
  if (ledger != nullptr) ledger->record_sequential(counts);
  return traj;
}

std::vector<Trajectory> integrate_batch(const VectorField& field, const std::vector<Vector>& z0,
                                        const std::vector<TimeSpan>& spans,
                                        const SolverSpec& spec, NfeLedger* ledger) {
  if (z0.size() != spans.size()) {
    throw ConfigError("integrate_batch needs as many spans as initial states");
  }
  spec.validate();
  std::vector<Trajectory> out(z0.size());
  std::vector<EvalCounts> counts(z0.size());
  parallel_for(z0.size(), [&](std::size_t i) {
    if (!(spans[i].start < spans[i].end)) throw ConfigError("integrate needs t_a < t_b");
    check_field_input(field, z0[i]);
    out[i] = integrate_system(field_system(field, counts[i]), z0[i], spans[i], spec);
  });
  if (ledger != nullptr) ledger->record_parallel(counts);
  return out;
}

namespace detail {

Vector flow(const VectorField& field, const Vector& z0, TimeSpan span, const SolverSpec& spec,
            EvalCounts& counts) {
  check_field_input(field, z0);
  return integrate_system(field_system(field, counts), z0, span, spec).final_state();
}

}  // namespace detail

}  // namespace timeshoot
