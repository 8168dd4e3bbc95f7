#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "timeshoot/field.hpp"
#include "timeshoot/mlp.hpp"
#include "timeshoot/tracking.hpp"

namespace timeshoot {

enum class CurveKind { circle, circus };

/// Desired closed curve s_d(q, p) = 0 in the (q, p) phase plane.
struct Curve {
  CurveKind kind = CurveKind::circle;
  double alpha = 1.0;  // circus only
  double k = 1.0;      // circus only
};

Curve parse_curve(std::string_view name, double alpha = 1.0, double k = 1.0);
std::string_view to_string(CurveKind kind);

/// circle: q^2 + p^2 - 1; circus: sqrt((q - a)^2 + p^2) sqrt((q + a)^2 + p^2) - k.
double curve_value(const Curve& curve, double q, double p);
/// (d s_d / dq, d s_d / dp); zero where a circus factor vanishes.
Vector curve_gradient(const Curve& curve, double q, double p);

/// -1, 0 or 1.
double sign(double x);

/// Limit-cycle stabilisation of a 1-dof mechanical system with z = (q, p).
struct LimitCycleTask {
  Curve curve;
  double control_weight = 0.0;
  std::vector<Vector> z0_batch;
  double horizon = 10.0;
  std::size_t intervals = 100;
};

/// `count` points uniform in [lo, hi]^dim.
std::vector<Vector> uniform_initial_conditions(std::size_t count, Index dim, double lo, double hi,
                                               std::uint64_t seed);

/// One activation per layer, output last. Empty means tanh hidden layers and an
/// identity output.
using LayerActivations = std::vector<Activation>;

/// Closed loop q' = p, p' = pi_theta(q, p) with a network 2 -> hidden... -> 1.
std::unique_ptr<ControlledField> make_limit_cycle_field(const std::vector<Index>& hidden,
                                                        std::uint64_t seed,
                                                        const LayerActivations& activations = {});

/// 1 / (2 N |Z0|) sum_j sum_{n=1..N} |s_d(b_{n,j})| + alpha |pi_theta(b_{n,j})|_1.
/// The pinned b_0 = z0 is excluded. The control term needs a ControlledField.
class LimitCycleLoss final : public NodeLoss {
 public:
  explicit LimitCycleLoss(Curve curve, double control_weight = 0.0)
      : curve_(curve), control_weight_(control_weight) {}

  LossEvaluation evaluate(const VectorField& field,
                          std::span<const ShootingState> states) const override;

 private:
  Curve curve_;
  double control_weight_;
};

/// mean over samples and components of 2|x - y| / (|x| + |y| + 1e-12).
double smape(const std::vector<Vector>& reference, const std::vector<Vector>& test);

/// z' = A z + B u with state partitions for the rotation and translation blocks.
struct LinearControlTask {
  Matrix a;
  Matrix b;
  std::vector<Index> sigma_r;
  std::vector<Index> sigma_t;
  double control_weight = 0.0;

  Index state_dim() const { return a.rows(); }
  Index control_dim() const { return b.cols(); }
  /// Throws ConfigError on inconsistent shapes or partitions.
  void validate() const;
};

/// Loads A and B from matrix CSV files. The default partition treats the
/// state as [positions; velocities] of nodes with (translation, rotation)
/// pairs: even offsets within each half are translations, odd are rotations.
LinearControlTask load_linear_system(const std::string& path_a, const std::string& path_b);
void assign_default_partition(LinearControlTask& task);

/// Closed loop z' = A z + B pi_theta(z) with a network n_z -> hidden... -> n_u.
std::unique_ptr<ControlledField> make_linear_control_field(const LinearControlTask& task,
                                                           const std::vector<Index>& hidden,
                                                           std::uint64_t seed,
                                                           const LayerActivations& activations = {});

/// 1 / (N |Z0|) sum_j sum_{n=1..N} |b_{n,sigma_r}|_2 + |b_{n,sigma_t}|_2 + alpha |pi(b_n)|_1.
class LinearControlLoss final : public NodeLoss {
 public:
  explicit LinearControlLoss(const LinearControlTask& task)
      : sigma_r_(task.sigma_r), sigma_t_(task.sigma_t), control_weight_(task.control_weight) {}

  LossEvaluation evaluate(const VectorField& field,
                          std::span<const ShootingState> states) const override;

 private:
  std::vector<Index> sigma_r_;
  std::vector<Index> sigma_t_;
  double control_weight_;
};

/// Loss sum_j sum_n w_n . b_{n,j} with fixed weights; linear in the nodes.
class LinearNodeLoss final : public NodeLoss {
 public:
  explicit LinearNodeLoss(std::vector<Vector> weights) : weights_(std::move(weights)) {}

  LossEvaluation evaluate(const VectorField& field,
                          std::span<const ShootingState> states) const override;

 private:
  std::vector<Vector> weights_;
};

}  // namespace timeshoot
