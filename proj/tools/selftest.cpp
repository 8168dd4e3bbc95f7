#include <cmath>
#include <ostream>
#include <random>

#include "cli.hpp"
#include "timeshoot/adjoint.hpp"
#include "timeshoot/csv.hpp"
#include "timeshoot/shooting.hpp"

namespace timeshoot::cli {

namespace {

double max_rel(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  double worst = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    worst = std::max(worst, (a[n] - b[n]).lpNorm<Eigen::Infinity>() /
                                std::max(b[n].lpNorm<Eigen::Infinity>(), 1e-12));
  }
  return worst;
}

bool report(std::ostream& out, bool ok, const char* name, double value) {
  out << (ok ? "PASS " : "FAIL ") << name << " value=" << format_double(value) << '\n';
  return ok;
}

}  // namespace

int selftest(std::ostream& out) {
  bool all = true;
  const auto fine = SolverSpec::adaptive(1e-8, 1e-8);

  {
    const VanDerPolField field(1.0);
    Vector z0(2);
    z0 << 1.0, 0.0;
    const auto grid = TimeGrid::uniform(0.0, 4.0, 8);
    MslOptions opts;
    opts.fine = fine;
    opts.max_iters = 8;
    opts.residual_tol = 0.0;
    const auto report_ = msl_solve(field, z0, grid, opts);
    const double err = max_rel(report_.state.b, sequential_solve(field, z0, grid, fine));
    all &= report(out, err <= 1e-6, "finite_step_convergence", err);
  }
  {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> dist;
    Matrix a(3, 3);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = 0.5 * dist(rng);
    const LinearField field(a);
    Vector z0(3);
    z0 << 1.0, -0.5, 0.25;
    ShootingState st = init_shooting(field, z0, TimeGrid::uniform(0.0, 2.0, 5), InitStrategy::broadcast());
    for (std::size_t n = 1; n < st.b.size(); ++n) {
      for (Index i = 0; i < 3; ++i) st.b[n][i] += dist(rng);
    }
    const auto spec = SolverSpec::fixed(Method::rk4, 3);
    const auto direct = newton_direct_iteration(field, st, spec, NewtonMode::fw_sensitivity);
    const auto dense = newton_dense_reference(field, st, spec, 1.0);
    const double err = max_rel(direct.b, dense.b);
    all &= report(out, err <= 1e-10, "dense_equals_direct", err);
  }
  {
    const VanDerPolField field(1.0);
    Vector z0(2);
    z0 << 2.0, 0.0;
    const auto grid = TimeGrid::uniform(0.0, 3.0, 6);
    const auto st = init_shooting(field, z0, grid, InitStrategy::fine(fine));
    const auto next = parareal_iteration(field, st, fine, SolverSpec::fixed(Method::rk4, 1));
    const double err = max_rel(next.b, st.b);
    all &= report(out, err <= 1e-10, "parareal_fixed_point", err);
  }
  {
    Matrix a(1, 1);
    a << -1.0;
    const LinearField field(a, true);
    Vector z0(1);
    z0 << 1.0;
    const auto grid = TimeGrid::uniform(0.0, 1.0, 20);
    const auto tight = SolverSpec::adaptive(1e-10, 1e-10);
    const auto st = init_shooting(field, z0, grid, InitStrategy::fine(tight));
    std::vector<Vector> c(grid.node_count(), Vector::Zero(1));
    c.back().setOnes();
    AdjointOptions opts;
    opts.forward = tight;
    opts.backward = tight;
    const double g = interpolated_adjoint_grad(field, st, c, opts).grad[0];
    const double err = std::abs(g - std::exp(-1.0)) / std::exp(-1.0);
    all &= report(out, err <= 1e-4, "scalar_adjoint_gradient", err);
  }
  return all ? kSuccess : kCheckFailure;
}

}  // namespace timeshoot::cli
