// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <cli.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include <timeshoot/csv.hpp>
#include <timeshoot/errors.hpp>
#include <timeshoot/field.hpp>
#include <timeshoot/mlp.hpp>
#include <timeshoot/ode.hpp>
#include <timeshoot/sensitivity.hpp>
#include <timeshoot/shooting.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using namespace timeshoot;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run_cli(const cli::RunConfig& rc) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(rc, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

cli::RunConfig command(const std::string& name, const fs::path& config, const fs::path& out) {
  cli::RunConfig rc;
  rc.command = name;
  rc.config = config;
  rc.out_dir = out;
  return rc;
}

fs::path preset(const std::string& name) { return testing::source_dir() / "presets" / name; }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("timeshoot_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CsvTable load_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  return read_csv(in);
}

double report_value(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) throw std::runtime_error("report lacks " + key);
  return std::stod(text.substr(pos + key.size() + 1));
}

std::vector<double> report_values(const std::string& text, const std::string& key) {
  std::vector<double> values;
  for (auto pos = text.find(key + "="); pos != std::string::npos; pos = text.find(key + "=", pos + 1)) {
    values.push_back(std::stod(text.substr(pos + key.size() + 1)));
  }
  return values;
}

/// Copy of a preset with `epochs = <n>` in place of the configured epoch count.
fs::path shortened_preset(const std::string& name, int epochs, const fs::path& dir) {
  const std::string text =
      std::regex_replace(slurp(preset(name)), std::regex(R"(\nepochs = \d+)"), "\nepochs = " + std::to_string(epochs));
  const fs::path path = dir / name;
  std::ofstream(path) << text;
  return path;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

double node_error(const ShootingState& s, const std::vector<Vector>& ref, std::size_t upto) {
  double worst = 0.0;
  for (std::size_t n = 0; n <= upto; ++n) {
    worst = std::max(worst, (s.b[n] - ref[n]).lpNorm<Eigen::Infinity>() /
                                std::max(ref[n].lpNorm<Eigen::Infinity>(), 1e-300));
  }
  return worst;
}

// --- criteria ------------------------------------------------------------------

// Direct Newton on Van der Pol from a broadcast start: nodes 0..k correct after k
// iterations, all nodes after N.
Outcome finite_step_convergence() {
  const VanDerPolField f;
  const TimeGrid g = TimeGrid::uniform(0.0, 8.0, 8);
  const SolverSpec fine = SolverSpec::adaptive(1e-8, 1e-8);
  const Vector z0 = (Vector(2) << 2.0, 0.0).finished();
  const auto ref = sequential_solve(f, z0, g, SolverSpec::adaptive(1e-12, 1e-12));
  ShootingState s = init_shooting(f, z0, g, InitStrategy::broadcast());
  double worst_prefix = 0.0;
  for (std::size_t k = 1; k <= 8; ++k) {
    s = newton_direct_iteration(f, s, fine, NewtonMode::fw_sensitivity);
    worst_prefix = std::max(worst_prefix, node_error(s, ref, k));
  }
  const double final_error = node_error(s, ref, 8);
  return {worst_prefix <= 1e-6 && final_error <= 1e-6,
          "worst prefix rel error " + fmt(worst_prefix) + ", all nodes after 8 iterations " + fmt(final_error)};
}

// One dense Newton solve equals the direct sweep on random instances.
Outcome dense_matches_direct() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> nz(1, 4), nn(1, 8);
  double worst = 0.0;
  for (int instance = 0; instance < 20; ++instance) {
    const Index dim = nz(rng);
    const auto intervals = static_cast<std::size_t>(nn(rng));
    std::unique_ptr<VectorField> f;
    if (instance % 2 == 0) {
      f = std::make_unique<LinearField>(testing::random_matrix(dim, dim, rng));
    } else {
      f = std::make_unique<NeuralField>(MlpField::random({dim, 8, dim}, {Activation::tanh, Activation::identity},
                                                         static_cast<std::uint64_t>(instance)));
    }
    const TimeGrid g = TimeGrid::uniform(0.0, 0.25 * static_cast<double>(intervals), intervals);
    ShootingState s = init_shooting(*f, testing::random_vector(dim, rng), g, InitStrategy::broadcast());
    for (std::size_t n = 1; n < s.b.size(); ++n) s.b[n] = testing::random_vector(dim, rng);
    const SolverSpec spec = SolverSpec::fixed(Method::rk4, 2);
    const ShootingState dense = newton_dense_reference(*f, s, spec, 1.0);
    const ShootingState direct = newton_direct_iteration(*f, s, spec, NewtonMode::fw_sensitivity);
    worst = std::max(worst, testing::rel(dense.as_matrix(), direct.as_matrix()));
  }
  return {worst <= 1e-10, "20 instances, worst rel difference " + fmt(worst)};
}

// Flow sensitivities against central differences and the matrix exponential.
Outcome sensitivity_accuracy() {
  const SolverSpec tight = SolverSpec::adaptive(1e-11, 1e-11);
  auto fd_error = [&](const VectorField& f, const Vector& b, TimeSpan span) {
    const double h = 1e-6;
    Matrix fd(f.dim(), f.dim());
    for (Index j = 0; j < f.dim(); ++j) {
      Vector bp = b, bm = b;
      bp(j) += h;
      bm(j) -= h;
      fd.col(j) = (integrate(f, bp, span, tight).final_state() - integrate(f, bm, span, tight).final_state()) / (2 * h);
    }
    return testing::rel(flow_with_sensitivity(f, b, span, tight).sensitivity, fd);
  };
  const VanDerPolField vdp;
  const ControlledField controlled(
      std::make_shared<MechanicalPlant>(),
      MlpField::random({2, 16, 16, 1}, {Activation::tanh, Activation::tanh, Activation::identity}, 5));
  const double e_vdp = fd_error(vdp, (Vector(2) << 2.0, 0.0).finished(), {0.0, 0.5});
  const double e_ctrl = fd_error(controlled, (Vector(2) << 1.0, -0.5).finished(), {0.0, 0.5});
  std::mt19937_64 rng(8);
  const Matrix a = testing::random_matrix(4, 4, rng) - Matrix::Identity(4, 4);
  const LinearField lin(a);
  double e_exp = 0.0;
  for (double h : {0.1, 0.5, 1.0}) {
    const auto fs = flow_with_sensitivity(lin, testing::random_vector(4, rng), {0.0, h}, SolverSpec::adaptive(1e-10, 1e-10));
    e_exp = std::max(e_exp, testing::rel(fs.sensitivity, (a * h).exp()));
  }
  return {e_vdp <= 1e-5 && e_ctrl <= 1e-5 && e_exp <= 1e-6,
          "fd rel error vdp " + fmt(e_vdp) + ", controlled " + fmt(e_ctrl) + "; expm rel error " + fmt(e_exp)};
}

// Adjoint, implicit and finite-difference gradients agree on the gradcheck presets.
Outcome gradient_agreement() {
  bool pass = true;
  std::string detail;
  for (const char* name : {"scalar_gradcheck.toml", "limit_cycle_gradcheck.toml"}) {
    const CliRun r = run_cli(command("gradcheck", preset(name), scratch(std::string("grad_") + name)));
    if (r.code != 0 && r.code != cli::kCheckFailure) throw std::runtime_error(r.err);
    const double adj_fd = report_value(r.out, "adjoint_vs_fd");
    const double adj_imp = report_value(r.out, "adjoint_vs_implicit");
    pass = pass && adj_fd <= 1e-3 && adj_imp <= 1e-4;
    detail += std::string(detail.empty() ? "" : "; ") + name + " adjoint-fd " + fmt(adj_fd) + " adjoint-implicit " +
              fmt(adj_imp);
  }
  return {pass, detail};
}

// Tracking error scales quadratically with the learning rate.
Outcome tracking_scaling() {
  const CliRun r = run_cli(command("track-scaling", preset("track_scaling.toml"), scratch("scaling")));
  if (r.code != 0) throw std::runtime_error(r.err);
  const double slope = report_value(r.out, "log_log_slope");
  const auto ratios = report_values(r.out, "halving_ratio");
  bool pass = std::abs(slope - 2.0) <= 0.5 && !ratios.empty();
  std::string detail = "slope " + fmt(slope) + ", halving ratios";
  for (double q : ratios) {
    pass = pass && q >= 2.5 && q <= 6.0;
    detail += " " + fmt(q);
  }
  return {pass, detail};
}

struct DeskRun {
  CliRun report;
  CsvTable trace;
};

DeskRun& desk_run() {
  static DeskRun run = [] {
    const fs::path out = scratch("desk");
    DeskRun d;
    d.report = run_cli(command("control", preset("control_desk.toml"), out));
    if (d.report.code != 0) throw std::runtime_error(d.report.err);
    d.trace = load_csv(out / "control_trace.csv");
    return d;
  }();
  return run;
}

// Per-epoch forward work of tracking vs sequential adaptive training.
Outcome nfe_economics() {
  const DeskRun& desk = desk_run();
  const double msl_span = report_value(desk.report.out, "span_nfe_per_epoch");
  const double msl_total = report_value(desk.report.out, "total_nfe_per_epoch");
  const fs::path dir = scratch("desk_baseline");
  cli::RunConfig rc = command("control", shortened_preset("control_desk.toml", 3, dir), dir / "out");
  rc.baseline = "dopri5";
  const CliRun base = run_cli(rc);
  if (base.code != 0) throw std::runtime_error(base.err);
  const double base_span = report_value(base.out, "span_nfe_per_epoch");
  const double base_total = report_value(base.out, "total_nfe_per_epoch");
  return {msl_span == 8.0 && base_span >= 10.0 * msl_span,
          "span/epoch msl " + fmt(msl_span) + " vs dopri5 " + fmt(base_span) + " (" + fmt(base_span / msl_span) +
              "x); total/epoch msl " + fmt(msl_total) + " vs dopri5 " + fmt(base_total) + " (reported only)"};
}

// Desk-scale control: tracked states stay accurate and the loss decreases.
Outcome desk_control() {
  const DeskRun& desk = desk_run();
  const CsvTable& t = desk.trace;
  double worst = 0.0;
  std::size_t checked = 0;
  bool finite = true;
  for (std::size_t row = 0; row < t.rows.size(); ++row) {
    const double s = t.number(row, "smape");
    if (std::isnan(s)) continue;
    ++checked;
    finite = finite && std::isfinite(s);
    worst = std::max(worst, s);
  }
  const double loss1 = t.number(0, "loss");
  const double loss50 = t.number(49, "loss");
  // wall_ms is cumulative since the start of training
  const double msl_ms = t.number(t.rows.size() - 1, "wall_ms") / static_cast<double>(t.rows.size());
  const bool pass = t.rows.size() == 200 && checked >= 20 && finite && worst < 0.05 && loss50 < loss1;
  return {pass, std::to_string(t.rows.size()) + " epochs, max smape " + fmt(worst) + " over " + std::to_string(checked) +
                    " checks, loss " + fmt(loss1) + " -> " + fmt(loss50) + " at epoch 50, " + fmt(msl_ms / 1000.0) +
                    " s/epoch (speedup reported only)"};
}

// Parareal leaves an exact solution unchanged whatever the active window.
Outcome parareal_invariance() {
  double worst = 0.0;
  const std::vector<std::shared_ptr<VectorField>> fields{
      std::make_shared<VanDerPolField>(), std::make_shared<RayleighDuffingField>(),
      std::make_shared<NeuralField>(MlpField::random({2, 8, 2}, {Activation::tanh, Activation::identity}, 4))};
  const TimeGrid g = TimeGrid::uniform(0.0, 4.0, 10);
  const SolverSpec fine = SolverSpec::fixed(Method::rk4, 4);
  for (const auto& f : fields) {
    ShootingState s = init_shooting(*f, (Vector(2) << 1.0, 0.5).finished(), g, InitStrategy::broadcast());
    s.b = sequential_solve(*f, s.z0, g, fine);
    for (std::size_t from = 1; from <= g.intervals(); ++from) {
      s.active_from = from;
      const ShootingState next = parareal_iteration(*f, s, fine, SolverSpec::fixed(Method::euler, 1));
      worst = std::max(worst, node_error(next, s.b, g.intervals()));
    }
  }
  return {worst <= 1e-10, "worst node change " + fmt(worst)};
}

// Outputs are bit-identical across thread counts and reruns.
Outcome determinism() {
  std::vector<std::string> solves, controllers, traces;
  int index = 0;
  const fs::path dir = scratch("determinism");
  const fs::path control_cfg = shortened_preset("control_desk.toml", 3, dir);
  for (int threads : {1, 4, 1}) {
    const fs::path out = dir / std::to_string(index++);
    cli::RunConfig solve = command("solve", preset("vanderpol.toml"), out / "solve");
    solve.threads = threads;
    if (run_cli(solve).code != 0) return {false, "solve failed"};
    solves.push_back(slurp(out / "solve" / "B_final.csv"));
    cli::RunConfig control = command("control", control_cfg, out / "control");
    control.threads = threads;
    if (run_cli(control).code != 0) return {false, "control failed"};
    controllers.push_back(slurp(out / "control" / "controller.json"));
    const CsvTable t = load_csv(out / "control" / "control_trace.csv");
    std::string losses;
    for (const auto& row : t.rows) losses += row[t.column("loss")] + row[t.column("smape")] + ";";
    traces.push_back(losses);
  }
  const bool pass = solves[0] == solves[1] && solves[0] == solves[2] && controllers[0] == controllers[1] &&
                    controllers[0] == controllers[2] && traces[0] == traces[1] && traces[0] == traces[2];
  return {pass, "threads 1/4/1: solve nodes, trained controller and loss trace " +
                    std::string(pass ? "identical" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"finite-step Newton convergence", finite_step_convergence},
      {"dense Newton reference equals direct sweep", dense_matches_direct},
      {"flow sensitivity accuracy", sensitivity_accuracy},
      {"gradient agreement", gradient_agreement},
      {"quadratic tracking-error scaling", tracking_scaling},
      {"per-epoch forward NFE economics", nfe_economics},
      {"desk-scale limit-cycle control", desk_control},
      {"parareal invariance", parareal_invariance},
      {"bitwise determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << " [" << fmt(secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
