#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include <timeshoot/errors.hpp>
#include <timeshoot/field.hpp>
#include <timeshoot/ledger.hpp>
#include <timeshoot/mlp.hpp>
#include <timeshoot/ode.hpp>
#include <timeshoot/sensitivity.hpp>

#include "support.hpp"

using namespace timeshoot;
using testing::vec;

namespace {

const SolverSpec kTight = SolverSpec::adaptive(1e-11, 1e-11);

Matrix fd_flow_jacobian(const VectorField& f, const Vector& b, TimeSpan span, double h = 1e-6) {
  Matrix jac(f.dim(), b.size());
  for (Index j = 0; j < b.size(); ++j) {
    Vector bp = b, bm = b;
    bp(j) += h;
    bm(j) -= h;
    jac.col(j) = (integrate(f, bp, span, kTight).final_state() -
                  integrate(f, bm, span, kTight).final_state()) /
                 (2 * h);
  }
  return jac;
}

Matrix damped_rotation() {
  Matrix a(3, 3);
  a << -0.1, 1.0, 0.0, -1.0, -0.1, 0.3, 0.0, 0.2, -0.5;
  return a;
}

}  // namespace

TEST_CASE("scalar decay flow and sensitivity") {
  const LinearField f = testing::scalar_field(-1.0);
  const auto fs = flow_with_sensitivity(f, vec({1.0}), {0.0, 1.0}, SolverSpec::adaptive(1e-10, 1e-10));
  CHECK(std::abs(fs.flow(0) - std::exp(-1.0)) < 1e-9);
  CHECK(std::abs(fs.sensitivity(0, 0) - std::exp(-1.0)) < 1e-9);
}

TEST_CASE("constant field has identity sensitivity") {
  const auto f = testing::constant_field(vec({0.5, -2.0}));
  const auto fs = flow_with_sensitivity(f, vec({1.0, 1.0}), {0.0, 2.0}, SolverSpec::fixed(Method::rk4, 3));
  CHECK(testing::rel(fs.flow, vec({2.0, -3.0})) < 1e-15);
  CHECK(fs.sensitivity == Matrix::Identity(2, 2));
}

TEST_CASE("zero-length span returns the seed") {
  VanDerPolField f;
  const auto fs = flow_with_sensitivity(f, vec({2.0, 0.0}), {0.5, 0.5}, kTight);
  CHECK(fs.flow == vec({2.0, 0.0}));
  CHECK(fs.sensitivity == Matrix::Identity(2, 2));
  const Matrix seed = 3.0 * Matrix::Identity(2, 2);
  CHECK(flow_with_sensitivity(f, vec({2.0, 0.0}), {0.5, 0.5}, kTight, nullptr, {}, &seed).sensitivity ==
        seed);
}

TEST_CASE("Van der Pol sensitivity vs finite differences") {
  VanDerPolField f;
  const auto fs = flow_with_sensitivity(f, vec({2.0, 0.0}), {0.0, 0.1}, kTight);
  CHECK(testing::rel(fs.sensitivity, fd_flow_jacobian(f, vec({2.0, 0.0}), {0.0, 0.1})) <= 1e-5);
}

TEST_CASE("controlled network sensitivity vs finite differences") {
  const ControlledField f(std::make_shared<MechanicalPlant>(),
                          MlpField::random({2, 8, 8, 1}, {Activation::tanh, Activation::tanh, Activation::identity}, 2));
  const auto fs = flow_with_sensitivity(f, vec({1.0, -0.5}), {0.0, 1.0}, kTight);
  CHECK(testing::rel(fs.sensitivity, fd_flow_jacobian(f, vec({1.0, -0.5}), {0.0, 1.0})) <= 1e-5);
}

TEST_CASE("linear sensitivity is the matrix exponential") {
  const Matrix a = damped_rotation();
  const LinearField f(a);
  for (double h : {0.1, 0.7, 2.0}) {
    const Matrix expected = (a * h).exp();
    const auto fs = flow_with_sensitivity(f, vec({1.0, 2.0, 3.0}), {0.0, h}, SolverSpec::adaptive(1e-10, 1e-10));
    CHECK(testing::rel(fs.sensitivity, expected) <= 1e-6);
    CHECK(testing::rel(fs.flow, expected * vec({1.0, 2.0, 3.0})) <= 1e-6);
  }
}

TEST_CASE("batch sensitivity is state independent for linear fields") {
  const Matrix a = damped_rotation();
  const LinearField f(a);
  std::mt19937_64 rng(4);
  std::vector<Vector> b;
  std::vector<TimeSpan> spans;
  for (int i = 0; i < 5; ++i) {
    b.push_back(testing::random_vector(3, rng, 10.0));
    spans.push_back({0.25 * i, 0.25 * (i + 1)});
  }
  const auto res = batch_flow_with_sensitivity(f, b, spans, SolverSpec::fixed(Method::rk4, 20));
  const Matrix expected = (a * 0.25).exp();
  for (const Matrix& s : res.sensitivities) CHECK(testing::rel(s, expected) <= 1e-6);
}

TEST_CASE("batch equals element-wise calls and identical inputs agree") {
  VanDerPolField f;
  const std::vector<Vector> b{vec({2.0, 0.0}), vec({2.0, 0.0}), vec({-0.5, 1.0})};
  const std::vector<TimeSpan> spans{{0.0, 0.5}, {0.0, 0.5}, {0.5, 1.0}};
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 4);
  const auto res = batch_flow_with_sensitivity(f, b, spans, spec);
  CHECK(testing::same_bits(res.flows[0], res.flows[1]));
  CHECK(res.sensitivities[0] == res.sensitivities[1]);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto one = flow_with_sensitivity(f, b[i], spans[i], spec);
    CHECK(testing::same_bits(one.flow, res.flows[i]));
    CHECK(one.sensitivity == res.sensitivities[i]);
  }
}

TEST_CASE("chained sub-interval sensitivities compose to the whole interval") {
  VanDerPolField f;
  const SolverSpec spec = SolverSpec::adaptive(1e-10, 1e-10);
  std::vector<Vector> b{vec({2.0, 0.0})};
  for (int n = 0; n < 3; ++n) {
    b.push_back(integrate(f, b.back(), {0.25 * n, 0.25 * (n + 1)}, spec).final_state());
  }
  std::vector<TimeSpan> spans;
  for (int n = 0; n < 4; ++n) spans.push_back({0.25 * n, 0.25 * (n + 1)});
  const auto res = batch_flow_with_sensitivity(f, b, spans, spec);
  const Matrix chained =
      res.sensitivities[3] * res.sensitivities[2] * res.sensitivities[1] * res.sensitivities[0];
  const auto whole = flow_with_sensitivity(f, vec({2.0, 0.0}), {0.0, 1.0}, spec);
  CHECK(testing::rel(chained, whole.sensitivity) <= 1e-4);
}

TEST_CASE("scaled seed scales the sensitivity") {
  VanDerPolField f;
  const SolverSpec spec = SolverSpec::fixed(Method::rk4, 8);
  const auto base = flow_with_sensitivity(f, vec({1.0, 1.0}), {0.0, 1.0}, spec);
  const Matrix seed = -2.5 * Matrix::Identity(2, 2);
  const auto scaled = flow_with_sensitivity(f, vec({1.0, 1.0}), {0.0, 1.0}, spec, nullptr, {}, &seed);
  CHECK(testing::rel(scaled.sensitivity, -2.5 * base.sensitivity) <= 1e-14);
}

TEST_CASE("jvp correction equals the matrix path") {
  VanDerPolField f;
  std::mt19937_64 rng(8);
  for (const SolverSpec& spec : {SolverSpec::fixed(Method::rk4, 5), SolverSpec::fixed(Method::euler, 9)}) {
    for (int draw = 0; draw < 10; ++draw) {
      const Vector b = testing::random_vector(2, rng, 2.0);
      const Vector d = testing::random_vector(2, rng);
      const Vector jv = sequential_jvp_correction(f, b, {0.0, 0.6}, spec, d);
      const auto fs = flow_with_sensitivity(f, b, {0.0, 0.6}, spec);
      CHECK(testing::rel(jv, fs.sensitivity * d) <= 1e-10);
    }
  }
  CHECK(sequential_jvp_correction(f, vec({2.0, 0.0}), {0.0, 1.0}, kTight, Vector::Zero(2)).norm() == 0.0);
}

TEST_CASE("jvp correction on a linear field is exp(Ah) times the direction") {
  const Matrix a = damped_rotation();
  const LinearField f(a);
  const Vector d = vec({0.3, -1.0, 2.0});
  const Vector jv = sequential_jvp_correction(f, vec({1.0, 1.0, 1.0}), {0.0, 1.5}, SolverSpec::adaptive(1e-10, 1e-10), d);
  CHECK(testing::rel(jv, (a * 1.5).exp() * d) <= 1e-6);
}

TEST_CASE("augmented integration shares evaluations with the state") {
  VanDerPolField f;
  for (const SolverSpec& spec : {SolverSpec::fixed(Method::rk4, 3), SolverSpec::adaptive(1e-8, 1e-8)}) {
    NfeLedger plain, fused, columns;
    integrate(f, vec({2.0, 0.0}), {0.0, 1.0}, spec, &plain);
    flow_with_sensitivity(f, vec({2.0, 0.0}), {0.0, 1.0}, spec, &fused);
    SensitivityOptions opts;
    opts.jmp = JmpMode::columns;
    flow_with_sensitivity(f, vec({2.0, 0.0}), {0.0, 1.0}, spec, &columns, opts);
    CHECK(fused.total_nfe() == plain.total_nfe());
    CHECK(fused.total_jmp() == plain.total_nfe());
    CHECK(fused.total_jvp() == 0);
    CHECK(columns.total_nfe() == plain.total_nfe());
    CHECK(columns.total_jvp() == 2 * plain.total_nfe());
  }
}

TEST_CASE("batch sensitivity ledger accrues as one element") {
  VanDerPolField f;
  NfeLedger ledger;
  const std::vector<Vector> b(6, vec({1.0, 0.0}));
  std::vector<TimeSpan> spans;
  for (int n = 0; n < 6; ++n) spans.push_back({0.1 * n, 0.1 * (n + 1)});
  batch_flow_with_sensitivity(f, b, spans, SolverSpec::fixed(Method::rk4, 2), &ledger);
  CHECK(ledger.span_nfe() == 8);
  CHECK(ledger.total_nfe() == 48);
}

TEST_CASE("sensitivity blowup mentions the sensitivity dynamics") {
  const testing::LambdaField f(
      1, [](double, const Vector& z) { return (z.array() * z.array()).matrix().eval(); },
      [](double, const Vector& z) { return Matrix::Constant(1, 1, 2 * z(0)); });
  try {
    flow_with_sensitivity(f, vec({1.0}), {0.0, 3.0}, SolverSpec::fixed(Method::rk4, 4));
    FAIL("expected NumericalBlowup");
  } catch (const NumericalBlowup& e) {
    CHECK(std::string(e.what()).find("sensitivity dynamics") != std::string::npos);
  }
}
