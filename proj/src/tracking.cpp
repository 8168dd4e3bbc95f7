#include "timeshoot/tracking.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "timeshoot/csv.hpp"
#include "timeshoot/errors.hpp"
#include "timeshoot/parallel.hpp"
#include "timeshoot/problems.hpp"

namespace timeshoot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::vector<std::vector<Vector>> reference_solves(const VectorField& field,
                                                  std::span<const ShootingState> states,
                                                  const SolverSpec& spec) {
  std::vector<std::vector<Vector>> out(states.size());
  parallel_for(states.size(), [&](std::size_t s) {
    out[s] = sequential_solve(field, states[s].z0, states[s].grid, spec);
  });
  return out;
}

double batch_smape(std::span<const ShootingState> states,
                   const std::vector<std::vector<Vector>>& reference) {
  std::vector<Vector> ref;
  std::vector<Vector> test;
  for (std::size_t s = 0; s < states.size(); ++s) {
    ref.insert(ref.end(), reference[s].begin(), reference[s].end());
    test.insert(test.end(), states[s].b.begin(), states[s].b.end());
  }
  return smape(ref, test);
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::gd ? "gd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "gd") return OptimizerKind::gd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected gd or adam)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (newton_iters_per_step < 1) throw ConfigError("newton_iters_per_step must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw ConfigError("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
  if (reference_every < 1) throw ConfigError("reference_every must be at least 1");
  if (!(divergence_guard > 1.0)) throw ConfigError("divergence_guard must exceed 1");
  fine.validate();
  if (reference) reference->validate();
}

Optimizer::Optimizer(const TrainConfig& cfg, Index size)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      epsilon_(cfg.epsilon),
      m_(Vector::Zero(size)),
      v_(Vector::Zero(size)) {}

Vector Optimizer::step(const Vector& theta, const Vector& grad) {
  if (grad.size() != m_.size() || theta.size() != m_.size()) {
    throw ConfigError("optimizer received a vector of the wrong size");
  }
  if (kind_ == OptimizerKind::gd) return theta - lr_ * grad;
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const Vector denom = (v_ / c2).cwiseSqrt().array() + epsilon_;
  return theta - lr_ * ((m_ / c1).array() / denom.array()).matrix();
}

Vector batch_adjoint_gradient(const VectorField& field, std::span<const ShootingState> states,
                              const LossEvaluation& loss, const AdjointOptions& options,
                              NfeLedger* ledger) {
  if (loss.node_grads.size() != states.size()) {
    throw ConfigError("loss returned node gradients for " + std::to_string(loss.node_grads.size()) +
                      " states, batch has " + std::to_string(states.size()));
  }
  const Index np = field.param_count();
  std::vector<Vector> grads(states.size());
  std::vector<EvalCounts> counts(states.size());
  parallel_for(states.size(), [&](std::size_t s) {
    NfeLedger local;
    grads[s] = interpolated_adjoint_grad(field, states[s], loss.node_grads[s], options, &local).grad;
    counts[s] = {local.total_nfe(), local.total_jvp(), local.total_jmp()};
  });
  if (ledger != nullptr) ledger->record_parallel(counts);
  Vector total = Vector::Zero(np);
  for (const auto& g : grads) total += g;
  if (loss.param_grad.size() == np) {
    total += loss.param_grad;
  } else if (loss.param_grad.size() != 0) {
    throw ConfigError("loss parameter gradient has the wrong size");
  }
  return total;
}

EpochRecord::EpochRecord() : tracking_error(kNaN), smape(kNaN), warm_residual(kNaN) {}

Trainer::Trainer(VectorField& field, const NodeLoss& loss, std::vector<ShootingState> states,
                 TrainConfig cfg)
    : field_(field),
      loss_(loss),
      states_(std::move(states)),
      cfg_(std::move(cfg)),
      optimizer_(cfg_, field.param_count()) {
  cfg_.validate();
  if (states_.empty()) throw ConfigError("training needs at least one initial condition");
  started_ms_ = now_ms();
  initial_residual_ = residual();
}

double Trainer::residual() const {
  double worst = 0.0;
  for (const auto& st : states_) {
    worst = std::max(worst, matching_residual(field_, st, cfg_.fine).norm_inf);
  }
  return worst;
}

EpochRecord Trainer::step() {
  EpochRecord rec;
  rec.epoch = ++epoch_;

  const LossEvaluation loss = loss_.evaluate(field_, states_);
  rec.loss = loss.value;
  NfeLedger backward;
  const Vector grad = batch_adjoint_gradient(field_, states_, loss, cfg_.adjoint, &backward);
  rec.backward_nfe = backward.total_nfe();
  backward_.append(backward);

  field_.set_params(optimizer_.step(field_.params(), grad));

  NfeLedger forward;
  std::vector<double> warm;
  for (auto& st : states_) st.active_from = 1;
  for (int k = 0; k < cfg_.newton_iters_per_step; ++k) {
    newton_direct_iteration(field_, std::span<ShootingState>(states_), cfg_.fine,
                            cfg_.newton_mode, &forward, k == 0 ? &warm : nullptr);
    for (auto& st : states_) st.active_from = 1;
  }
  rec.total_nfe = forward.total_nfe();
  rec.span_nfe = forward.span_nfe();
  forward_.append(forward);

  rec.warm_residual = *std::max_element(warm.begin(), warm.end());
  if (rec.epoch == 1) baseline_residual_ = std::max(initial_residual_, rec.warm_residual);
  const double limit = cfg_.divergence_guard * std::max(baseline_residual_, cfg_.guard_floor);
  if (!(rec.warm_residual <= limit)) {
    throw StaleSolutionError("tracking diverged at epoch " + std::to_string(rec.epoch) +
                             ": warm-start residual " + format_double(rec.warm_residual) +
                             " exceeds guard " + format_double(limit));
  }
  rec.residual_inf = residual();

  const bool boundary = rec.epoch == 1 || rec.epoch == cfg_.epochs;
  if (cfg_.reference && (boundary || rec.epoch % cfg_.reference_every == 0)) {
    const auto ref = reference_solves(field_, states_, *cfg_.reference);
    rec.tracking_error = tracking_error(states_, ref);
    rec.smape = batch_smape(states_, ref);
  }
  rec.wall_ms = now_ms() - started_ms_;
  return rec;
}

std::vector<EpochRecord> Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> out;
  out.reserve(static_cast<std::size_t>(cfg_.epochs));
  for (int e = 0; e < cfg_.epochs; ++e) {
    out.push_back(step());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

BaselineTrainer::BaselineTrainer(VectorField& field, const NodeLoss& loss,
                                 std::vector<Vector> z0_batch, TimeGrid grid, SolverSpec solver,
                                 TrainConfig cfg)
    : field_(field),
      loss_(loss),
      z0_batch_(std::move(z0_batch)),
      grid_(std::move(grid)),
      solver_(solver),
      cfg_(std::move(cfg)),
      optimizer_(cfg_, field.param_count()) {
  cfg_.validate();
  solver_.validate();
  if (z0_batch_.empty()) throw ConfigError("training needs at least one initial condition");
  started_ms_ = now_ms();
}

EpochRecord BaselineTrainer::step() {
  EpochRecord rec;
  rec.epoch = ++epoch_;
  NfeLedger forward;
  const auto states = converged_states(field_, z0_batch_, grid_, solver_, &forward);
  rec.total_nfe = forward.total_nfe();
  rec.span_nfe = forward.span_nfe();
  rec.residual_inf = 0.0;

  const LossEvaluation loss = loss_.evaluate(field_, states);
  rec.loss = loss.value;
  NfeLedger backward;
  const Vector grad = batch_adjoint_gradient(field_, states, loss, cfg_.adjoint, &backward);
  rec.backward_nfe = backward.total_nfe();
  field_.set_params(optimizer_.step(field_.params(), grad));
  rec.wall_ms = now_ms() - started_ms_;
  return rec;
}

std::vector<EpochRecord> BaselineTrainer::run(
    const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> out;
  for (int e = 0; e < cfg_.epochs; ++e) {
    out.push_back(step());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

std::vector<ShootingState> converged_states(const VectorField& field,
                                            const std::vector<Vector>& z0_batch,
                                            const TimeGrid& grid, const SolverSpec& spec,
                                            NfeLedger* ledger) {
  std::vector<std::optional<ShootingState>> built(z0_batch.size());
  std::vector<EvalCounts> counts(z0_batch.size());
  parallel_for(z0_batch.size(), [&](std::size_t s) {
    NfeLedger local;
    built[s] = init_shooting(field, z0_batch[s], grid, InitStrategy::fine(spec), &local);
    counts[s] = {local.total_nfe(), local.total_jvp(), local.total_jmp()};
  });
  if (ledger != nullptr) ledger->record_parallel(counts);
  std::vector<ShootingState> states;
  states.reserve(built.size());
  for (auto& st : built) states.push_back(std::move(*st));
  return states;
}

double tracking_error(std::span<const ShootingState> tracked,
                      std::span<const std::vector<Vector>> reference) {
  if (tracked.size() != reference.size()) throw ConfigError("tracking reference size mismatch");
  double sq = 0.0;
  for (std::size_t s = 0; s < tracked.size(); ++s) {
    if (tracked[s].b.size() != reference[s].size()) {
      throw ConfigError("tracking reference node count mismatch");
    }
    for (std::size_t n = 0; n < reference[s].size(); ++n) {
      sq += (tracked[s].b[n] - reference[s][n]).squaredNorm();
    }
  }
  return std::sqrt(sq);
}

double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("slope fit needs two or more points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ConfigError("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ConfigError("slope fit needs distinct x values");
  return sxy / sxx;
}

ScalingResult tracking_scaling_experiment(VectorField& field, const NodeLoss& loss,
                                          const std::vector<Vector>& z0_batch,
                                          const TimeGrid& grid, const std::vector<double>& etas,
                                          int epochs_per_eta, TrainConfig cfg) {
  std::vector<double> positive;
  for (double eta : etas) {
    if (eta > 0.0) positive.push_back(eta);
  }
  if (positive.size() < 3) throw ConfigError("scaling experiment needs three positive rates");
  const auto [lo, hi] = std::minmax_element(positive.begin(), positive.end());
  if (*hi < 4.0 * *lo) throw ConfigError("scaling experiment rates must span a factor of 4");

  cfg.optimizer = OptimizerKind::gd;
  cfg.epochs = epochs_per_eta;
  cfg.reference_every = 1;
  if (!cfg.reference) cfg.reference = cfg.fine;
  const Vector theta0 = field.params();
  const auto start = converged_states(field, z0_batch, grid, cfg.fine);

  ScalingResult result;
  try {
    for (double eta : etas) {
      field.set_params(theta0);
      cfg.learning_rate = eta;
      Trainer trainer(field, loss, start, cfg);
      double sum = 0.0;
      for (const auto& rec : trainer.run()) sum += rec.tracking_error;
      result.rows.push_back({eta, sum / epochs_per_eta});
    }
  } catch (...) {
    field.set_params(theta0);
    throw;
  }
  field.set_params(theta0);

  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& row : result.rows) {
    if (row.eta > 0.0) {
      xs.push_back(row.eta);
      ys.push_back(row.mean_tracking_error);
    }
  }
  result.slope = log_log_slope(xs, ys);
  for (const auto& a : result.rows) {
    for (const auto& b : result.rows) {
      if (a.eta > 0.0 && b.eta == 0.5 * a.eta) {
        result.halving_ratios.push_back(a.mean_tracking_error / b.mean_tracking_error);
      }
    }
  }
  return result;
}

void write_tracking_trace(std::ostream& out, std::span<const EpochRecord> records,
                          std::string_view hash, bool with_smape) {
  std::vector<std::string> cols{"epoch",    "loss",     "tracking_error", "residual_inf",
                                "total_nfe", "span_nfe", "wall_ms"};
  if (with_smape) cols.emplace_back("smape");
  CsvWriter csv(out, cols, hash);
  for (const auto& r : records) {
    csv.cell(r.epoch).cell(r.loss).cell(r.tracking_error).cell(r.residual_inf);
    csv.cell(r.total_nfe).cell(r.span_nfe).cell(r.wall_ms);
    if (with_smape) csv.cell(r.smape);
    csv.end_row();
  }
}

void write_scaling_table(std::ostream& out, const ScalingResult& result, std::string_view hash) {
  out << "# log_log_slope=" << format_double(result.slope) << '\n';
  CsvWriter csv(out, {"eta", "mean_tracking_error"}, hash);
  for (const auto& row : result.rows) {
    csv.cell(row.eta).cell(row.mean_tracking_error);
    csv.end_row();
  }
}

}  // namespace timeshoot
