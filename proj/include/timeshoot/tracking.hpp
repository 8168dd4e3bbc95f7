#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "timeshoot/adjoint.hpp"
#include "timeshoot/field.hpp"
#include "timeshoot/ledger.hpp"
#include "timeshoot/ode.hpp"
#include "timeshoot/shooting.hpp"

namespace timeshoot {

enum class OptimizerKind { gd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 1;
  int newton_iters_per_step = 1;
  std::uint64_t seed = 0;

  /// Sub-interval solver of the Newton iterations and the residual check.
  SolverSpec fine = SolverSpec::fixed(Method::rk4, 2);
  NewtonMode newton_mode = NewtonMode::fw_sensitivity;
  AdjointOptions adjoint = untracked_adjoint();

  /// Fresh sequential solve used for tracking_error and SMAPE; skipped when unset.
  std::optional<SolverSpec> reference;
  /// Reference solve every k epochs (the first and last epochs always get one).
  int reference_every = 1;

  /// Training aborts when the warm-start residual exceeds
  /// guard * max(baseline, guard_floor). The baseline is the larger of the
  /// residual before training and the warm-start residual of the first epoch.
  double divergence_guard = 1e2;
  double guard_floor = 1e-10;

  /// Throws ConfigError on invalid values. A zero learning rate is allowed.
  void validate() const;

  static AdjointOptions untracked_adjoint() {
    AdjointOptions opts;
    opts.check_residual = false;
    return opts;
  }
};

/// Gradient descent or Adam on a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, Index size);

  Vector step(const Vector& theta, const Vector& grad);

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

/// Loss value and its derivatives for a batch of shooting states.
struct LossEvaluation {
  double value = 0.0;
  /// node_grads[s][n] = dL/db_n of state s.
  std::vector<std::vector<Vector>> node_grads;
  /// Explicit dL/dtheta (terms where the loss reads the parameters directly).
  Vector param_grad;
};

/// A loss that decomposes over the shooting parameters of every state.
class NodeLoss {
 public:
  virtual ~NodeLoss() = default;
  virtual LossEvaluation evaluate(const VectorField& field,
                                  std::span<const ShootingState> states) const = 0;
};

/// dL/dtheta of a batched node loss: one interpolated adjoint per state
/// (concurrently) plus the explicit parameter term.
Vector batch_adjoint_gradient(const VectorField& field, std::span<const ShootingState> states,
                              const LossEvaluation& loss, const AdjointOptions& options,
                              NfeLedger* ledger = nullptr);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double tracking_error;
  double smape;
  /// Matching residual after the Newton sweep.
  double residual_inf = 0.0;
  /// Matching residual of the recycled states at the updated parameters,
  /// before the Newton sweep.
  double warm_residual;
  /// Forward (Newton) work of this epoch.
  std::int64_t total_nfe = 0;
  std::int64_t span_nfe = 0;
  /// Backward (adjoint) work of this epoch.
  std::int64_t backward_nfe = 0;
  /// Time since the trainer was created.
  double wall_ms = 0.0;

  EpochRecord();
};

/// Full-batch training with fixed-point tracking: each step takes the
/// adjoint gradient at the tracked states, updates the parameters and runs
/// `newton_iters_per_step` warm-started Newton sweeps with the whole window
/// reopened.
class Trainer {
 public:
  Trainer(VectorField& field, const NodeLoss& loss, std::vector<ShootingState> states,
          TrainConfig cfg);

  EpochRecord step();
  /// Runs cfg.epochs steps; `on_epoch` sees every record as it is produced.
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  const std::vector<ShootingState>& states() const { return states_; }
  const NfeLedger& forward_ledger() const { return forward_; }
  const NfeLedger& backward_ledger() const { return backward_; }
  double initial_residual() const { return initial_residual_; }

 private:
  double residual() const;

  VectorField& field_;
  const NodeLoss& loss_;
  std::vector<ShootingState> states_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  NfeLedger forward_;
  NfeLedger backward_;
  double initial_residual_ = 0.0;
  double baseline_residual_ = 0.0;
  int epoch_ = 0;
  double started_ms_ = 0.0;
};

/// Training without shooting: every epoch solves each trajectory
/// sequentially with `solver` (trajectories run concurrently), evaluates the
/// loss at the grid nodes and takes the interpolated adjoint gradient along
/// that solution. Used as the cost baseline for tracked training.
class BaselineTrainer {
 public:
  BaselineTrainer(VectorField& field, const NodeLoss& loss, std::vector<Vector> z0_batch,
                  TimeGrid grid, SolverSpec solver, TrainConfig cfg);

  EpochRecord step();
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

 private:
  VectorField& field_;
  const NodeLoss& loss_;
  std::vector<Vector> z0_batch_;
  TimeGrid grid_;
  SolverSpec solver_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  int epoch_ = 0;
  double started_ms_ = 0.0;
};

/// Converged starting states: a sequential solve with `spec` from every z0.
std::vector<ShootingState> converged_states(const VectorField& field,
                                            const std::vector<Vector>& z0_batch,
                                            const TimeGrid& grid, const SolverSpec& spec,
                                            NfeLedger* ledger = nullptr);

/// Euclidean distance between tracked states and fresh sequential solves.
double tracking_error(std::span<const ShootingState> tracked,
                      std::span<const std::vector<Vector>> reference);

struct ScalingRow {
  double eta = 0.0;
  double mean_tracking_error = 0.0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  /// Least-squares slope of log(error) against log(eta) over eta > 0.
  double slope = 0.0;
  /// error(eta) / error(eta / 2) for consecutive halvings in `rows`.
  std::vector<double> halving_ratios;
};

/// For each learning rate, restarts from the field's current parameters and
/// converged states, runs `epochs_per_eta` gradient-descent tracking steps
/// and averages the tracking error against `cfg.reference` (default: the
/// fine solver). The field's parameters are restored afterwards.
ScalingResult tracking_scaling_experiment(VectorField& field, const NodeLoss& loss,
                                          const std::vector<Vector>& z0_batch,
                                          const TimeGrid& grid, const std::vector<double>& etas,
                                          int epochs_per_eta, TrainConfig cfg);

/// Least-squares slope of log(y) against log(x).
double log_log_slope(std::span<const double> x, std::span<const double> y);

/// CSV rows: epoch, loss, tracking_error, residual_inf, total_nfe, span_nfe,
/// wall_ms, plus smape when requested.
void write_tracking_trace(std::ostream& out, std::span<const EpochRecord> records,
                          std::string_view config_hash, bool with_smape = false);

void write_scaling_table(std::ostream& out, const ScalingResult& result,
                         std::string_view config_hash);

}  // namespace timeshoot
