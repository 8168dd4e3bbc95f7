#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include <timeshoot/csv.hpp>
#include <timeshoot/errors.hpp>
#include <timeshoot/field.hpp>
#include <timeshoot/mlp.hpp>
#include <timeshoot/shooting.hpp>

#include "support.hpp"

using namespace timeshoot;
using testing::vec;

namespace {

const SolverSpec kDopri8 = SolverSpec::adaptive(1e-8, 1e-8);

ShootingState broadcast(const VectorField& f, const Vector& z0, const TimeGrid& g) {
  return init_shooting(f, z0, g, InitStrategy::broadcast());
}

ShootingState random_state(const VectorField& f, const TimeGrid& g, std::mt19937_64& rng) {
  ShootingState s = broadcast(f, testing::random_vector(f.dim(), rng), g);
  for (std::size_t n = 1; n < s.b.size(); ++n) s.b[n] = testing::random_vector(f.dim(), rng);
  return s;
}

double max_rel_rows(const ShootingState& s, const std::vector<Vector>& ref, std::size_t upto) {
  double worst = 0.0;
  for (std::size_t n = 0; n <= upto; ++n) {
    worst = std::max(worst, (s.b[n] - ref[n]).norm() / std::max(ref[n].norm(), 1e-300));
  }
  return worst;
}

}  // namespace

TEST_CASE("broadcast init repeats z0") {
  VanDerPolField f;
  const ShootingState s = broadcast(f, vec({1.0, 2.0}), TimeGrid::uniform(0, 1, 3));
  REQUIRE(s.b.size() == 4);
  for (const auto& row : s.b) CHECK(row == vec({1.0, 2.0}));
  CHECK(s.active_from == 1);
  CHECK(s.as_matrix().rows() == 4);
}

TEST_CASE("fine rollout init on exponential decay") {
  const LinearField f = testing::scalar_field(-1.0);
  const ShootingState s = init_shooting(f, vec({1.0}), TimeGrid::uniform(0, 1, 4), InitStrategy::fine(kDopri8));
  for (int n = 0; n <= 4; ++n) CHECK(std::abs(s.b[n](0) - std::exp(-n / 4.0)) <= 1e-7);
}

TEST_CASE("coarse Euler rollout halves each node") {
  const LinearField f = testing::scalar_field(-1.0);
  const ShootingState s =
      init_shooting(f, vec({1.0}), TimeGrid::uniform(0, 1, 2), InitStrategy::coarse(Method::euler));
  CHECK(s.b[0](0) == 1.0);
  CHECK(s.b[1](0) == 0.5);
  CHECK(s.b[2](0) == 0.25);
}

TEST_CASE("matching residual vanishes at a tight sequential solution") {
  VanDerPolField f;
  const SolverSpec tight = SolverSpec::adaptive(1e-10, 1e-10);
  const ShootingState s =
      init_shooting(f, vec({2.0, 0.0}), TimeGrid::uniform(0, 4, 8), InitStrategy::fine(tight));
  const MatchResidual r = matching_residual(f, s, tight);
  CHECK(r.norm_inf <= 10 * 1e-10);
  CHECK(r.g[0].norm() == 0.0);
}

TEST_CASE("matching residual of broadcast decay") {
  const LinearField f = testing::scalar_field(-1.0);
  const MatchResidual r = matching_residual(f, broadcast(f, vec({1.0}), TimeGrid::uniform(0, 1, 2)),
                                            SolverSpec::adaptive(1e-10, 1e-10));
  CHECK(std::abs(r.g[1](0) - (1.0 - std::exp(-0.5))) < 1e-9);
  CHECK(r.g[0](0) == 0.0);
}

TEST_CASE("zero field has zero residual for broadcast states") {
  const auto f = testing::constant_field(Vector::Zero(3));
  const MatchResidual r =
      matching_residual(f, broadcast(f, vec({1.0, -2.0, 3.0}), TimeGrid::uniform(0, 5, 7)), kDopri8);
  CHECK(r.norm_inf == 0.0);
}

TEST_CASE("one Newton iteration is exact for linear fields") {
  std::mt19937_64 rng(12);
  const LinearField f(testing::random_matrix(3, 3, rng));
  const TimeGrid g = TimeGrid::uniform(0, 2, 6);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 5);
  for (NewtonMode mode : {NewtonMode::fw_sensitivity, NewtonMode::sequential_jvp}) {
    const ShootingState s = newton_direct_iteration(f, random_state(f, g, rng), spec, mode);
    const auto ref = sequential_solve(f, s.z0, g, spec);
    CHECK(matching_residual(f, s, spec).norm_inf <= 1e-10 * s.as_matrix().cwiseAbs().maxCoeff());
    CHECK(max_rel_rows(s, ref, 6) <= 1e-12);
  }
}

TEST_CASE("Newton leaves a converged state in place") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 3, 6);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 4);
  ShootingState s = broadcast(f, vec({2.0, 0.0}), g);
  s.b = sequential_solve(f, s.z0, g, spec);
  const ShootingState next = newton_direct_iteration(f, s, spec, NewtonMode::fw_sensitivity);
  CHECK(max_rel_rows(next, s.b, 6) <= 1e-14);
  CHECK(next.active_from == 2);
  CHECK(next.iteration == 1);
}

TEST_CASE("Van der Pol converges in N Newton iterations") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 2, 4);
  const SolverSpec spec = SolverSpec::adaptive(1e-10, 1e-10);
  const auto ref = sequential_solve(f, vec({2.0, 0.0}), g, spec);
  ShootingState s = broadcast(f, vec({2.0, 0.0}), g);
  for (int k = 0; k < 4; ++k) s = newton_direct_iteration(f, s, spec, NewtonMode::fw_sensitivity);
  CHECK(max_rel_rows(s, ref, 4) <= 1e-6);
}

TEST_CASE("finite-step convergence and frozen prefix for Newton and parareal") {
  const std::vector<std::shared_ptr<VectorField>> fields{
      std::make_shared<VanDerPolField>(),
      std::make_shared<RayleighDuffingField>(),
      std::make_shared<NeuralField>(MlpField::random({2, 8, 2}, {Activation::tanh, Activation::identity}, 3))};
  const TimeGrid g = TimeGrid::uniform(0, 1.5, 6);
  const SolverSpec fine = SolverSpec::fixed(Method::rk4, 4);
  const SolverSpec coarse = SolverSpec::fixed(Method::euler, 1);
  for (const auto& f : fields) {
    const Vector z0 = vec({1.5, -0.5});
    const auto ref = sequential_solve(*f, z0, g, fine);
    for (int variant = 0; variant < 3; ++variant) {
      ShootingState s = broadcast(*f, z0, g);
      for (std::size_t k = 1; k <= 6; ++k) {
        const ShootingState prev = s;
        if (variant == 0) s = newton_direct_iteration(*f, s, fine, NewtonMode::fw_sensitivity);
        if (variant == 1) s = newton_direct_iteration(*f, s, fine, NewtonMode::sequential_jvp);
        if (variant == 2) s = parareal_iteration(*f, s, fine, coarse);
        CHECK(s.active_from == k + 1);
        CHECK(max_rel_rows(s, ref, k) <= 1e-12);
        for (std::size_t n = 0; n < prev.active_from; ++n) CHECK(testing::same_bits(s.b[n], prev.b[n]));
      }
    }
  }
}

TEST_CASE("jvp and sensitivity Newton modes agree") {
  VanDerPolField f;
  std::mt19937_64 rng(5);
  const TimeGrid g = TimeGrid::uniform(0, 2, 5);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 3);
  const ShootingState s = random_state(f, g, rng);
  const ShootingState a = newton_direct_iteration(f, s, spec, NewtonMode::fw_sensitivity);
  const ShootingState b = newton_direct_iteration(f, s, spec, NewtonMode::sequential_jvp);
  CHECK(testing::rel(a.as_matrix(), b.as_matrix()) <= 1e-10);
}

TEST_CASE("batched Newton equals per-state Newton") {
  VanDerPolField f;
  std::mt19937_64 rng(6);
  const TimeGrid g = TimeGrid::uniform(0, 2, 5);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 2);
  std::vector<ShootingState> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_state(f, g, rng));
  std::vector<ShootingState> single;
  std::vector<double> expected_warm;
  for (const auto& s : batch) {
    single.push_back(newton_direct_iteration(f, s, spec, NewtonMode::fw_sensitivity));
    expected_warm.push_back(matching_residual(f, s, spec).norm_inf);
  }
  std::vector<double> warm;
  newton_direct_iteration(f, std::span<ShootingState>(batch), spec, NewtonMode::fw_sensitivity, nullptr, &warm);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].as_matrix() == single[i].as_matrix());
    CHECK(warm[i] == doctest::Approx(expected_warm[i]).epsilon(1e-12));
  }
}

TEST_CASE("Newton ledger on 100 sub-intervals of two rk4 steps") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 10, 100);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 2);
  NfeLedger ledger;
  newton_direct_iteration(f, broadcast(f, vec({2.0, 0.0}), g), spec, NewtonMode::fw_sensitivity, &ledger);
  CHECK(ledger.span_nfe() == 8);
  CHECK(ledger.total_nfe() == 800);
  CHECK(ledger.total_jmp() == 800);
}

TEST_CASE("window errors") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 1, 2);
  ShootingState s = broadcast(f, vec({2.0, 0.0}), g);
  s.active_from = 3;
  CHECK_THROWS_AS(newton_direct_iteration(f, s, kDopri8, NewtonMode::fw_sensitivity), ConfigError);
  s.active_from = 1;
  s.b.pop_back();
  CHECK_THROWS_AS(matching_residual(f, s, kDopri8), ConfigError);
}

TEST_CASE("parareal on decay, two sub-intervals") {
  const LinearField f = testing::scalar_field(-1.0);
  const TimeGrid g = TimeGrid::uniform(0, 1, 2);
  const SolverSpec coarse = SolverSpec::fixed(Method::euler, 1);
  ShootingState s = broadcast(f, vec({1.0}), g);
  s = parareal_iteration(f, s, kDopri8, coarse);
  CHECK(s.b[1](0) == integrate(f, vec({1.0}), g.interval(0), kDopri8).final_state()(0));
  CHECK(std::abs(s.b[1](0) - std::exp(-0.5)) < 1e-8);
  CHECK(std::abs(s.b[2](0) - std::exp(-1.0)) > 1e-3);
  s = parareal_iteration(f, s, kDopri8, coarse);
  const auto ref = sequential_solve(f, vec({1.0}), g, kDopri8);
  CHECK(max_rel_rows(s, ref, 2) <= 1e-7);
}

TEST_CASE("parareal is invariant at the solution") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 4, 8);
  const SolverSpec fine = SolverSpec::fixed(Method::rk4, 4);
  ShootingState s = broadcast(f, vec({2.0, 0.0}), g);
  s.b = sequential_solve(f, s.z0, g, fine);
  for (std::size_t from = 1; from <= 8; ++from) {
    s.active_from = from;
    const ShootingState next = parareal_iteration(f, s, fine, SolverSpec::fixed(Method::rk4, 1));
    CHECK(max_rel_rows(next, s.b, 8) <= 1e-10);
  }
}

TEST_CASE("dense Newton reference equals the direct sweep on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nz(1, 4), nn(1, 6);
  double worst = 0.0;
  for (int instance = 0; instance < 20; ++instance) {
    const Index dim = nz(rng);
    const std::size_t intervals = static_cast<std::size_t>(nn(rng));
    std::unique_ptr<VectorField> f;
    if (instance % 2 == 0) {
      f = std::make_unique<LinearField>(testing::random_matrix(dim, dim, rng));
    } else {
      f = std::make_unique<NeuralField>(
          MlpField::random({dim, 6, dim}, {Activation::tanh, Activation::identity}, instance));
    }
    const TimeGrid g = TimeGrid::uniform(0.0, 0.3 * static_cast<double>(intervals), intervals);
    const SolverSpec spec = SolverSpec::fixed(Method::rk4, 3);
    const ShootingState s = random_state(*f, g, rng);
    const ShootingState dense = newton_dense_reference(*f, s, spec, 1.0);
    const ShootingState direct = newton_direct_iteration(*f, s, spec, NewtonMode::fw_sensitivity);
    worst = std::max(worst, testing::rel(dense.as_matrix(), direct.as_matrix()));
    CHECK(dense.active_from == direct.active_from);
  }
  MESSAGE("worst dense/direct relative difference " << worst);
  CHECK(worst <= 1e-10);
}

TEST_CASE("dense reference damping and guard") {
  VanDerPolField f;
  std::mt19937_64 rng(77);
  const TimeGrid g = TimeGrid::uniform(0, 1, 4);
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 2);
  const ShootingState s = random_state(f, g, rng);
  const ShootingState still = newton_dense_reference(f, s, spec, 0.0);
  CHECK(still.as_matrix() == s.as_matrix());
  CHECK(still.active_from == s.active_from);
  CHECK_THROWS_AS(newton_dense_reference(f, s, spec, 1.0, nullptr, 9), SizeGuardError);

  const LinearField lin(testing::random_matrix(2, 2, rng));
  const ShootingState exact = newton_dense_reference(lin, random_state(lin, g, rng), spec, 1.0);
  CHECK(max_rel_rows(exact, sequential_solve(lin, exact.z0, g, spec), 4) <= 1e-12);
}

TEST_CASE("shift operator is nilpotent") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1u, 3u, 6u}) {
    std::vector<Matrix> blocks;
    for (std::size_t i = 0; i < n; ++i) blocks.push_back(testing::random_matrix(3, 3, rng));
    const Matrix r = assemble_shift_operator(blocks);
    CHECK(r.rows() == static_cast<Index>(3 * (n + 1)));
    Matrix power = Matrix::Identity(r.rows(), r.cols());
    for (std::size_t k = 0; k < n; ++k) power = power * r;
    CHECK(power.norm() > 0.0);
    power = power * r;
    CHECK(power.norm() == 0.0);
  }
}

TEST_CASE("msl_solve Van der Pol matches sequential dopri5") {
  VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0, 8, 8);
  MslOptions opts;
  opts.fine = kDopri8;
  opts.max_iters = 8;
  opts.residual_tol = 1e-8;
  const SolveReport rep = msl_solve(f, vec({2.0, 0.0}), g, opts);
  const auto ref = sequential_solve(f, vec({2.0, 0.0}), g, kDopri8);
  CHECK(max_rel_rows(rep.state, ref, 8) <= 1e-6);
  CHECK(rep.history.back().residual_inf <= 1e-8);
}

TEST_CASE("msl_solve stops after one iteration with a loose tolerance") {
  VanDerPolField f;
  MslOptions opts;
  opts.max_iters = 10;
  opts.residual_tol = 1e300;
  const SolveReport rep = msl_solve(f, vec({2.0, 0.0}), TimeGrid::uniform(0, 5, 10), opts);
  CHECK(rep.state.iteration == 1);
  CHECK(rep.history.size() == 1);
  opts.max_iters = 0;
  CHECK_THROWS_AS(msl_solve(f, vec({2.0, 0.0}), TimeGrid::uniform(0, 5, 10), opts), ConfigError);
}

TEST_CASE("msl_solve ledger with two rk4 steps on 100 sub-intervals") {
  VanDerPolField f;
  MslOptions opts;
  opts.fine = SolverSpec::fixed(Method::rk4, 2);
  opts.max_iters = 1;
  const SolveReport rep = msl_solve(f, vec({2.0, 0.0}), TimeGrid::uniform(0, 10, 100), opts);
  // one parallel flow stage for the iteration plus one for the residual check
  CHECK(rep.ledger.span_nfe() == 16);
  CHECK(rep.history[0].span_nfe == 16);
}

TEST_CASE("per-iteration work shrinks with the active window") {
  VanDerPolField f;
  MslOptions opts;
  opts.fine = SolverSpec::fixed(Method::rk4, 2);
  opts.max_iters = 6;
  opts.residual_tol = 0.0;
  for (RootMethod m : {RootMethod::newton_fw, RootMethod::newton_jvp, RootMethod::parareal}) {
    opts.method = m;
    const SolveReport rep = msl_solve(f, vec({2.0, 0.0}), TimeGrid::uniform(0, 2, 6), opts);
    REQUIRE(rep.history.size() == 6);
    std::int64_t prev = std::numeric_limits<std::int64_t>::max();
    std::int64_t before = 0;
    for (const auto& rec : rep.history) {
      const std::int64_t work = rec.total_nfe - before;
      CHECK(work <= prev);
      prev = work;
      before = rec.total_nfe;
    }
  }
}

TEST_CASE("Newton residual is non-increasing on linear fields") {
  std::mt19937_64 rng(31);
  const LinearField f(testing::random_matrix(3, 3, rng));
  MslOptions opts;
  opts.fine = SolverSpec::fixed(Method::rk4, 3);
  opts.max_iters = 5;
  opts.residual_tol = 0.0;
  ShootingState s = random_state(f, TimeGrid::uniform(0, 2, 5), rng);
  const double initial = matching_residual(f, s, opts.fine).norm_inf;
  const SolveReport rep = msl_solve(f, s, opts);
  double prev = initial;
  for (const auto& rec : rep.history) {
    CHECK(rec.residual_inf <= prev + 1e-14);
    prev = rec.residual_inf;
  }
}

TEST_CASE("root method names") {
  CHECK(parse_root_method("newton-fw") == RootMethod::newton_fw);
  CHECK(parse_root_method("newton-jvp") == RootMethod::newton_jvp);
  CHECK(parse_root_method("parareal") == RootMethod::parareal);
  CHECK(parse_root_method("dense-ref") == RootMethod::dense_ref);
  CHECK(to_string(RootMethod::dense_ref) == "dense-ref");
  CHECK_THROWS_AS(parse_root_method("broyden"), ConfigError);
}

TEST_CASE("solve summary CSV round-trip") {
  const std::vector<IterationRecord> hist{{1, 0.125, 800, 16, 1.5}, {2, 1e-17, 1600, 32, 2.25}};
  std::stringstream ss;
  write_solve_summary(ss, hist, "abc");
  const CsvTable t = read_csv(ss);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.comments[0] == " config_hash=abc");
  CHECK(t.number(1, "residual_inf") == 1e-17);
  CHECK(t.number(0, "total_nfe") == 800);
  CHECK(t.number(1, "wall_clock_ms") == 2.25);
}
