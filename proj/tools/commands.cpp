#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

#include "cli.hpp"
#include "timeshoot/adjoint.hpp"
#include "timeshoot/config.hpp"
#include "timeshoot/csv.hpp"
#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"
#include "timeshoot/problems.hpp"
#include "timeshoot/shooting.hpp"
#include "timeshoot/tracking.hpp"

namespace timeshoot::cli {

int selftest(std::ostream& out);

namespace {

namespace fs = std::filesystem;

/// Everything a subcommand needs from a preset.
struct Setup {
  Config cfg;
  fs::path base_dir;
  std::uint64_t seed = 0;
  std::string hash;
};

SolverSpec solver_from(const Config& cfg, const std::string& prefix, const SolverSpec& fallback) {
  SolverSpec spec = fallback;
  if (cfg.has(prefix + ".method")) spec.method = parse_method(cfg.get_string(prefix + ".method"));
  spec.step_count = static_cast<int>(cfg.get_int(prefix + ".steps", spec.step_count));
  spec.rtol = cfg.get_double(prefix + ".rtol", spec.rtol);
  spec.atol = cfg.get_double(prefix + ".atol", spec.atol);
  spec.validate();
  return spec;
}

std::vector<Index> hidden_widths(const Config& cfg, const std::vector<Index>& fallback) {
  if (!cfg.has("controller.hidden")) return fallback;
  std::vector<Index> out;
  for (long w : cfg.get_ints("controller.hidden")) out.push_back(static_cast<Index>(w));
  return out;
}

// controller.activations: comma-separated hidden-layer names; the output layer
// comes from controller.output_activation.
LayerActivations layer_activations(const Config& cfg, std::size_t hidden_layers) {
  const std::string output = cfg.get_string("controller.output_activation", "identity");
  if (!cfg.has("controller.activations") && output == "identity") return {};
  LayerActivations acts(hidden_layers, Activation::tanh);
  if (cfg.has("controller.activations")) {
    acts.clear();
    std::stringstream list(cfg.get_string("controller.activations"));
    for (std::string name; std::getline(list, name, ',');) {
      const auto first = name.find_first_not_of(' ');
      const auto last = name.find_last_not_of(' ');
      acts.push_back(parse_activation(first == std::string::npos ? "" : name.substr(first, last - first + 1)));
    }
    if (acts.size() != hidden_layers) {
      throw ConfigError("controller.activations lists " + std::to_string(acts.size()) + " names for " +
                        std::to_string(hidden_layers) + " hidden layers");
    }
  }
  acts.push_back(parse_activation(output));
  return acts;
}

LinearControlTask linear_task(const Setup& s) {
  LinearControlTask task = load_linear_system((s.base_dir / s.cfg.get_string("problem.a_file")).string(),
                                              (s.base_dir / s.cfg.get_string("problem.b_file")).string());
  task.control_weight = s.cfg.get_double("task.control_weight", 0.0);
  task.validate();
  return task;
}

std::unique_ptr<VectorField> build_field(const Setup& s) {
  const Config& cfg = s.cfg;
  const std::string name = cfg.get_string("problem.name");
  const std::uint64_t ctrl_seed = static_cast<std::uint64_t>(cfg.get_int("controller.seed", 0)) + s.seed;
  if (name == "vanderpol") return std::make_unique<VanDerPolField>(cfg.get_double("problem.alpha", 1.0));
  if (name == "rayleigh_duffing") {
    return std::make_unique<RayleighDuffingField>(cfg.get_double("problem.alpha", 1.0));
  }
  if (name == "scalar") {
    Matrix a(1, 1);
    a << cfg.get_double("problem.theta");
    return std::make_unique<LinearField>(a, true);
  }
  if (name == "linear") {
    const std::vector<double> flat = cfg.get_doubles("problem.matrix");
    const auto dim = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(flat.size()))));
    if (dim * dim != static_cast<Index>(flat.size())) {
      throw ConfigError("problem.matrix must hold a square matrix in row-major order");
    }
    Matrix a(dim, dim);
    for (Index r = 0; r < dim; ++r) {
      for (Index c = 0; c < dim; ++c) a(r, c) = flat[static_cast<std::size_t>(r * dim + c)];
    }
    return std::make_unique<LinearField>(a, cfg.get_bool("problem.trainable", false));
  }
  if (name == "limit_cycle") {
    const auto hidden = hidden_widths(cfg, {32, 32});
    return make_limit_cycle_field(hidden, ctrl_seed, layer_activations(cfg, hidden.size()));
  }
  if (name == "linear_control") {
    const auto hidden = hidden_widths(cfg, {16, 16});
    return make_linear_control_field(linear_task(s), hidden, ctrl_seed, layer_activations(cfg, hidden.size()));
  }
  throw ConfigError("unknown problem.name '" + name +
                    "' (expected vanderpol, rayleigh_duffing, scalar, linear, limit_cycle or "
                    "linear_control)");
}

std::vector<Vector> initial_conditions(const Setup& s, Index dim) {
  const Config& cfg = s.cfg;
  if (cfg.has("problem.z0")) {
    const auto z = cfg.get_doubles("problem.z0");
    if (static_cast<Index>(z.size()) != dim) {
      throw ConfigError("problem.z0 has " + std::to_string(z.size()) + " entries, field needs " +
                        std::to_string(dim));
    }
    return {Eigen::Map<const Vector>(z.data(), dim)};
  }
  const long batch = cfg.get_int("task.batch");
  if (batch < 1) throw ConfigError("task.batch must be positive");
  const auto box = cfg.get_doubles("task.box");
  if (box.size() != 2) throw ConfigError("task.box must be [lo, hi]");
  const auto z_seed = static_cast<std::uint64_t>(cfg.get_int("task.z0_seed", 1)) + s.seed;
  return uniform_initial_conditions(static_cast<std::size_t>(batch), dim, box[0], box[1], z_seed);
}

TimeGrid grid_from(const Config& cfg) {
  const double t0 = cfg.get_double("problem.t0", 0.0);
  const long n = cfg.get_int("problem.intervals");
  if (n < 1) throw ConfigError("problem.intervals must be positive");
  return TimeGrid::uniform(t0, t0 + cfg.get_double("problem.horizon"), static_cast<std::size_t>(n));
}

std::unique_ptr<NodeLoss> build_loss(const Setup& s, std::size_t nodes, Index dim) {
  const Config& cfg = s.cfg;
  const std::string kind = cfg.get_string("task.loss");
  if (kind == "limit_cycle") {
    const Curve curve = parse_curve(cfg.get_string("task.curve", "circle"),
                                    cfg.get_double("task.curve_alpha", 1.0),
                                    cfg.get_double("task.curve_k", 1.0));
    return std::make_unique<LimitCycleLoss>(curve, cfg.get_double("task.control_weight", 0.0));
  }
  if (kind == "linear_control") return std::make_unique<LinearControlLoss>(linear_task(s));
  if (kind == "terminal" || kind == "zero") {
    std::vector<Vector> w(nodes, Vector::Zero(dim));
    if (kind == "terminal") w.back().setOnes();
    return std::make_unique<LinearNodeLoss>(std::move(w));
  }
  throw ConfigError("unknown task.loss '" + kind +
                    "' (expected limit_cycle, linear_control, terminal or zero)");
}

TrainConfig train_config(const Setup& s) {
  const Config& cfg = s.cfg;
  TrainConfig tc;
  tc.optimizer = parse_optimizer(cfg.get_string("training.optimizer", "adam"));
  tc.learning_rate = cfg.get_double("training.lr", tc.learning_rate);
  tc.epochs = static_cast<int>(cfg.get_int("training.epochs", tc.epochs));
  tc.newton_iters_per_step = static_cast<int>(cfg.get_int("training.newton_iters", 1));
  tc.seed = s.seed;
  tc.fine = solver_from(cfg, "solver.fine", SolverSpec::fixed(Method::rk4, 2));
  tc.adjoint.backward = solver_from(cfg, "training.backward", SolverSpec::adaptive(1e-7, 1e-7));
  if (cfg.get_bool("training.track_reference", true)) {
    tc.reference = solver_from(cfg, "training.reference", SolverSpec::adaptive(1e-8, 1e-8));
  }
  tc.reference_every = static_cast<int>(cfg.get_int("training.reference_every", 1));
  tc.divergence_guard = cfg.get_double("training.divergence_guard", tc.divergence_guard);
  tc.validate();
  return tc;
}

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

double node_rel_error(const Vector& b, const Vector& ref) {
  return (b - ref).lpNorm<Eigen::Infinity>() / std::max(ref.lpNorm<Eigen::Infinity>(), 1e-12);
}

// --- solve -------------------------------------------------------------------

int cmd_solve(const Setup& s, const RunConfig& rc, std::ostream& out) {
  const Config& cfg = s.cfg;
  const auto field = build_field(s);
  const Vector z0 = initial_conditions(s, field->dim()).front();
  const TimeGrid grid = grid_from(cfg);

  MslOptions opts;
  // read the key even when overridden so it is not reported as unused
  const std::string configured = cfg.get_string("solver.method", "newton-fw");
  opts.method = parse_root_method(rc.method ? *rc.method : configured);
  opts.fine = solver_from(cfg, "solver.fine", SolverSpec::adaptive(1e-8, 1e-8));
  opts.coarse = solver_from(cfg, "solver.coarse", SolverSpec::fixed(Method::rk4, 1));
  const std::string init = cfg.get_string("solver.init", "broadcast");
  if (init == "broadcast") {
    opts.init = InitStrategy::broadcast();
  } else if (init == "coarse") {
    opts.init = InitStrategy::coarse(opts.coarse.method);
  } else if (init == "fine") {
    opts.init = InitStrategy::fine(opts.fine);
  } else {
    throw ConfigError("solver.init must be broadcast, coarse or fine");
  }
  const long max_iters = cfg.get_int("solver.max_iters", 1);
  if (max_iters < 0) throw ConfigError("solver.max_iters must be non-negative");
  opts.max_iters = static_cast<int>(max_iters);
  opts.residual_tol = cfg.get_double("solver.residual_tol", opts.residual_tol);
  const SolverSpec ref_spec = solver_from(cfg, "reference", SolverSpec::adaptive(1e-8, 1e-8));
  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");

  SolveReport report{init_shooting(*field, z0, grid, opts.init), {}, {}};
  if (max_iters > 0) report = msl_solve(*field, z0, grid, opts);
  const ShootingState& state = report.state;
  const std::vector<Vector> reference = sequential_solve(*field, z0, grid, ref_spec);
  const MatchResidual residual = matching_residual(*field, state, opts.fine);

  ensure_out_dir(rc.out_dir);
  {
    auto f = open_out(rc.out_dir / "iterations.csv");
    write_solve_summary(f, report.history, s.hash);
  }
  double max_rel = 0.0;
  {
    auto f = open_out(rc.out_dir / "solve_summary.csv");
    CsvWriter csv(f, {"node", "t", "residual_inf", "rel_error"}, s.hash);
    for (std::size_t n = 0; n < state.b.size(); ++n) {
      const double rel = node_rel_error(state.b[n], reference[n]);
      max_rel = std::max(max_rel, rel);
      csv.cell(static_cast<std::int64_t>(n)).cell(grid.node(n));
      csv.cell(residual.g[n].lpNorm<Eigen::Infinity>()).cell(rel);
      csv.end_row();
    }
  }
  {
    auto f = open_out(rc.out_dir / "B_final.csv");
    std::vector<std::string> cols{"node", "t"};
    for (Index i = 0; i < state.dim(); ++i) cols.push_back("z" + std::to_string(i));
    CsvWriter csv(f, cols, s.hash);
    for (std::size_t n = 0; n < state.b.size(); ++n) {
      csv.cell(static_cast<std::int64_t>(n)).cell(grid.node(n));
      for (Index i = 0; i < state.dim(); ++i) csv.cell(state.b[n][i]);
      csv.end_row();
    }
  }
  out << "method=" << to_string(opts.method) << '\n';
  out << "iterations=" << state.iteration << '\n';
  out << "residual_inf=" << format_double(residual.norm_inf) << '\n';
  out << "converged=" << (residual.norm_inf <= opts.residual_tol ? "true" : "false") << '\n';
  out << "max_rel_error=" << format_double(max_rel) << '\n';
  out << "smape=" << format_double(smape(reference, state.b)) << '\n';
  out << "total_nfe=" << report.ledger.total_nfe() << '\n';
  out << "span_nfe=" << report.ledger.span_nfe() << '\n';
  return kSuccess;
}

// --- gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const Setup& s, const RunConfig& rc, std::ostream& out) {
  const Config& cfg = s.cfg;
  const auto field = build_field(s);
  if (field->param_count() == 0) throw ConfigError("gradcheck needs a field with parameters");
  const auto z0 = initial_conditions(s, field->dim());
  const TimeGrid grid = grid_from(cfg);
  const SolverSpec fine = solver_from(cfg, "solver.fine", SolverSpec::adaptive(1e-10, 1e-10));
  AdjointOptions aopt;
  aopt.forward = fine;
  aopt.backward = solver_from(cfg, "gradcheck.backward", SolverSpec::adaptive(1e-10, 1e-10));
  aopt.residual_tol = cfg.get_double("gradcheck.residual_tol", 1e-6);
  const double step = cfg.get_double("gradcheck.fd_step", 1e-5);
  const double fd_tol = cfg.get_double("gradcheck.fd_tol", 1e-3);
  const double implicit_tol = cfg.get_double("gradcheck.implicit_tol", 1e-4);
  const auto loss = build_loss(s, grid.node_count(), field->dim());
  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");

  auto states = converged_states(*field, z0, grid, fine);
  if (rc.unconverged) {
    for (auto& st : states) {
      for (std::size_t n = 1; n < st.b.size(); ++n) st.b[n].array() += 1e-3;
    }
  }
  const LossEvaluation le = loss->evaluate(*field, states);

  GradientReport adj;
  adj.method = GradientMethod::interpolated_adjoint;
  adj.grad = batch_adjoint_gradient(*field, states, le, aopt);
  GradientReport imp;
  imp.method = GradientMethod::implicit;
  imp.grad = le.param_grad;
  for (std::size_t j = 0; j < states.size(); ++j) {
    imp.grad += implicit_gradient(*field, states[j], fine, le.node_grads[j], aopt).grad;
  }
  GradientReport fd = finite_difference_grad(
      *field,
      [&] { return loss->evaluate(*field, converged_states(*field, z0, grid, fine)).value; }, step);

  const double adj_fd = adj.grad.isZero(0.0) && fd.grad.isZero(0.0) ? 0.0 : relative_error(adj.grad, fd.grad);
  const double imp_fd = imp.grad.isZero(0.0) && fd.grad.isZero(0.0) ? 0.0 : relative_error(imp.grad, fd.grad);
  const double adj_imp = adj.grad.isZero(0.0) && imp.grad.isZero(0.0) ? 0.0 : relative_error(adj.grad, imp.grad);
  adj.fd_relative_error = adj_fd;
  imp.fd_relative_error = imp_fd;

  ensure_out_dir(rc.out_dir);
  {
    auto f = open_out(rc.out_dir / "gradcheck.csv");
    const std::vector<GradientReport> rows{adj, imp, fd};
    write_gradient_reports(f, rows, s.hash);
  }
  const bool pass = adj_fd <= fd_tol && adj_imp <= implicit_tol;
  out << "params=" << field->param_count() << '\n';
  out << "loss=" << format_double(le.value) << '\n';
  out << "adjoint_vs_fd=" << format_double(adj_fd) << '\n';
  out << "implicit_vs_fd=" << format_double(imp_fd) << '\n';
  out << "adjoint_vs_implicit=" << format_double(adj_imp) << '\n';
  out << (pass ? "PASS" : "FAIL") << " gradcheck\n";
  return pass ? kSuccess : kCheckFailure;
}

// --- control -------------------------------------------------------------------

int cmd_control(const Setup& s, const RunConfig& rc, std::ostream& out) {
  const Config& cfg = s.cfg;
  auto field = build_field(s);
  const auto z0 = initial_conditions(s, field->dim());
  const TimeGrid grid = grid_from(cfg);
  const auto loss = build_loss(s, grid.node_count(), field->dim());
  const TrainConfig tc = train_config(s);
  const SolverSpec init_spec = solver_from(cfg, "training.init", SolverSpec::adaptive(1e-8, 1e-8));
  const std::string baseline = rc.baseline ? *rc.baseline : cfg.get_string("training.baseline", "none");
  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");
  ensure_out_dir(rc.out_dir);

  auto progress = [&](const EpochRecord& r) {
    out << "epoch=" << r.epoch << " loss=" << format_double(r.loss)
        << " span_nfe=" << r.span_nfe << " total_nfe=" << r.total_nfe << '\n';
  };
  std::vector<EpochRecord> trace;
  std::string trace_name;
  if (baseline == "none") {
    NfeLedger init_ledger;
    auto states = converged_states(*field, z0, grid, init_spec, &init_ledger);
    out << "init_total_nfe=" << init_ledger.total_nfe() << " init_span_nfe=" << init_ledger.span_nfe()
        << '\n';
    Trainer trainer(*field, *loss, std::move(states), tc);
    trace = trainer.run(progress);
    trace_name = "control_trace.csv";
  } else {
    SolverSpec solver;
    if (baseline == "rk4") {
      solver = tc.fine;
    } else if (baseline == "dopri5") {
      solver = init_spec;
    } else {
      throw ConfigError("baseline must be none, rk4 or dopri5");
    }
    BaselineTrainer trainer(*field, *loss, z0, grid, solver, tc);
    trace = trainer.run(progress);
    trace_name = "baseline_" + baseline + "_trace.csv";
  }
  {
    auto f = open_out(rc.out_dir / trace_name);
    write_tracking_trace(f, trace, s.hash, true);
  }
  if (const auto* controlled = dynamic_cast<const ControlledField*>(field.get())) {
    auto f = open_out(rc.out_dir / "controller.json");
    f << controlled->controller().to_json().dump(2) << '\n';
  }
  double max_smape = 0.0;
  double span = 0.0;
  double total = 0.0;
  for (const auto& r : trace) {
    if (!std::isnan(r.smape)) max_smape = std::max(max_smape, r.smape);
    span += static_cast<double>(r.span_nfe);
    total += static_cast<double>(r.total_nfe);
  }
  const auto epochs = static_cast<double>(trace.size());
  out << "mode=" << (baseline == "none" ? "msl" : "baseline-" + baseline) << '\n';
  out << "final_loss=" << format_double(trace.back().loss) << '\n';
  out << "max_smape=" << format_double(max_smape) << '\n';
  out << "span_nfe_per_epoch=" << format_double(span / epochs) << '\n';
  out << "total_nfe_per_epoch=" << format_double(total / epochs) << '\n';
  return kSuccess;
}

// --- track-scaling ---------------------------------------------------------------

int cmd_track_scaling(const Setup& s, const RunConfig& rc, std::ostream& out) {
  const Config& cfg = s.cfg;
  auto field = build_field(s);
  const auto z0 = initial_conditions(s, field->dim());
  const TimeGrid grid = grid_from(cfg);
  const auto loss = build_loss(s, grid.node_count(), field->dim());
  TrainConfig tc = train_config(s);
  tc.reference.reset();
  if (cfg.has("scaling.reference.method")) {
    tc.reference = solver_from(cfg, "scaling.reference", SolverSpec::adaptive(1e-8, 1e-8));
  }
  const auto etas = cfg.get_doubles("scaling.etas");
  const int epochs = static_cast<int>(cfg.get_int("scaling.epochs_per_eta", 5));
  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");

  const ScalingResult result = tracking_scaling_experiment(*field, *loss, z0, grid, etas, epochs, tc);
  ensure_out_dir(rc.out_dir);
  {
    auto f = open_out(rc.out_dir / "scaling.csv");
    write_scaling_table(f, result, s.hash);
  }
  for (const auto& row : result.rows) {
    out << "eta=" << format_double(row.eta) << " mean_tracking_error="
        << format_double(row.mean_tracking_error) << '\n';
  }
  out << "log_log_slope=" << format_double(result.slope) << '\n';
  for (double r : result.halving_ratios) out << "halving_ratio=" << format_double(r) << '\n';
  return kSuccess;
}

// --- bench -----------------------------------------------------------------------

int cmd_bench(const Setup& s, const RunConfig& rc, std::ostream& out) {
  const Config& cfg = s.cfg;
  const auto field = build_field(s);
  const auto z0 = initial_conditions(s, field->dim()).front();
  const double horizon = cfg.get_double("problem.horizon");
  const SolverSpec fine = solver_from(cfg, "solver.fine", SolverSpec::fixed(Method::rk4, 2));
  if (!fine.is_fixed_step()) throw ConfigError("bench needs a fixed-step fine solver");
  const auto intervals = cfg.get_ints("bench.intervals");
  std::vector<long> threads = cfg.get_ints("bench.threads");
  if (rc.threads) threads = {1, *rc.threads};
  const int repeats = static_cast<int>(cfg.get_int("bench.repeats", 3));
  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");
  for (long t : threads) {
    if (t < 1) throw ConfigError("bench thread counts must be at least 1");
  }
  if (repeats < 1) throw ConfigError("bench.repeats must be at least 1");

  ensure_out_dir(rc.out_dir);
  auto f = open_out(rc.out_dir / "bench.csv");
  CsvWriter csv(f, {"method", "N", "threads", "total_nfe", "span_nfe", "wall_ms"}, s.hash);
  using clock = std::chrono::steady_clock;
  const int saved_threads = thread_count();
  bool deterministic = true;
  for (long n : intervals) {
    if (n < 1) throw ConfigError("bench intervals must be positive");
    const TimeGrid grid = TimeGrid::uniform(0.0, horizon, static_cast<std::size_t>(n));
    {
      NfeLedger ledger;
      const auto t0 = clock::now();
      for (int r = 0; r < repeats; ++r) {
        ledger = NfeLedger{};
        sequential_solve(*field, z0, grid, fine, &ledger);
      }
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / repeats;
      csv.cell("sequential-rk4").cell(n).cell(1).cell(ledger.total_nfe()).cell(ledger.span_nfe()).cell(ms);
      csv.end_row();
    }
    std::optional<Matrix> first;
    double wall_one = 0.0;
    for (long t : threads) {
      set_thread_count(static_cast<int>(t));
      const ShootingState start = init_shooting(*field, z0, grid, InitStrategy::broadcast());
      ShootingState next = start;
      NfeLedger ledger;
      const auto t0 = clock::now();
      for (int r = 0; r < repeats; ++r) {
        ledger = NfeLedger{};
        next = newton_direct_iteration(*field, start, fine, NewtonMode::fw_sensitivity, &ledger);
      }
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / repeats;
      csv.cell("msl-newton-fw").cell(n).cell(t).cell(ledger.total_nfe()).cell(ledger.span_nfe()).cell(ms);
      csv.end_row();
      const Matrix b = next.as_matrix();
      if (!first) {
        first = b;
        wall_one = ms;
      } else if (!(b.array() == first->array()).all()) {
        deterministic = false;
      }
      out << "N=" << n << " threads=" << t << " wall_ms=" << format_double(ms)
          << " speedup=" << format_double(wall_one / ms) << '\n';
    }
  }
  set_thread_count(saved_threads);
  out << "deterministic=" << (deterministic ? "true" : "false") << '\n';
  return deterministic ? kSuccess : kCheckFailure;
}

int classify(const Error& e) {
  const std::string kind = e.kind();
  if (kind == "ConfigError" || kind == "SizeGuardError") return kConfigFailure;
  return kNumericalFailure;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '"', '\'');
  return text;
}

}  // namespace

int run(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  try {
    int threads = 1;
    if (rc.threads) {
      threads = *rc.threads;
    } else if (const char* env = std::getenv("TIMESHOOT_THREADS"); env != nullptr && *env != '\0') {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("TIMESHOOT_THREADS is not an integer: ") + env);
      }
    }
    set_thread_count(threads);
    if (rc.command == "selftest") return selftest(out);

    if (rc.config.empty()) throw ConfigError("--config is required for " + rc.command);
    Setup s{Config::load(rc.config), rc.config.parent_path(), 0, {}};
    s.seed = rc.seed ? *rc.seed : static_cast<std::uint64_t>(s.cfg.get_int("run.seed", 0));
    s.cfg.set("run.seed", std::to_string(s.seed));
    (void)s.cfg.get_int("run.seed");
    if (rc.method) s.cfg.set("solver.method", *rc.method);
    s.hash = config_hash(s.cfg.canonical());

    if (rc.command == "solve") return cmd_solve(s, rc, out);
    if (rc.command == "gradcheck") return cmd_gradcheck(s, rc, out);
    if (rc.command == "control") return cmd_control(s, rc, out);
    if (rc.command == "track-scaling") return cmd_track_scaling(s, rc, out);
    if (rc.command == "bench") return cmd_bench(s, rc, out);
    throw ConfigError("unknown subcommand '" + rc.command + "'");
  } catch (const Error& e) {
    err << "error kind=" << e.kind() << " message=\"" << one_line(e.what()) << "\"\n";
    return classify(e);
  } catch (const std::exception& e) {
    err << "error kind=InternalError message=\"" << one_line(e.what()) << "\"\n";
    return kNumericalFailure;
  }
}

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiple shooting layers: parallel-in-time ODE solves, gradients and training"};
  app.require_subcommand(1);
  RunConfig rc;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string method;
  std::string baseline;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", rc.config, "Preset file");
    if (needs_config) opt->required();
    sub->add_option("--out", rc.out_dir, "Output directory");
    sub->add_option("--seed", seed, "Seed overriding run.seed");
    sub->add_option("--threads", threads, "Worker threads (default: TIMESHOOT_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    return sub;
  };
  auto* solve = add_common(app.add_subcommand("solve", "Run an MSL solve and compare with a sequential reference"), true);
  solve->add_option("--method", method, "newton-fw, newton-jvp, parareal or dense-ref");
  auto* grad = add_common(app.add_subcommand("gradcheck", "Compare adjoint, implicit and finite-difference gradients"), true);
  grad->add_flag("--unconverged", rc.unconverged, "Perturb the state before taking gradients");
  auto* control = add_common(app.add_subcommand("control", "Train a controller with fixed-point tracking"), true);
  control->add_option("--baseline", baseline, "Train without shooting: rk4 or dopri5");
  add_common(app.add_subcommand("track-scaling", "Tracking error against learning rate"), true);
  add_common(app.add_subcommand("bench", "NFE and wall-clock benchmark"), true);
  add_common(app.add_subcommand("selftest", "Quick built-in checks"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kSuccess;
    }
    err << "error kind=ConfigError message=\"" << one_line(e.what()) << "\"\n";
    return kConfigFailure;
  }
  rc.command = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) rc.seed = seed;
  if (sub->count("--threads") > 0) rc.threads = threads;
  if (sub->get_option_no_throw("--method") != nullptr && sub->count("--method") > 0) rc.method = method;
  if (sub->get_option_no_throw("--baseline") != nullptr && sub->count("--baseline") > 0) {
    rc.baseline = baseline;
  }
  return run(rc, out, err);
}

}  // namespace timeshoot::cli
