#include "timeshoot/problems.hpp"

#include <cmath>
#include <random>
#include <string>

#include "timeshoot/errors.hpp"
#include "timeshoot/matrix_io.hpp"

namespace timeshoot {

namespace {

const ControlledField* controlled_or_null(const VectorField& field, double weight) {
  if (weight == 0.0) return nullptr;
  const auto* controlled = dynamic_cast<const ControlledField*>(&field);
  if (controlled == nullptr) throw ConfigError("control effort term needs a controlled field");
  return controlled;
}

/// Adds weight * |pi(b)|_1 to value, its b-gradient to grad_b and its
/// parameter gradient to grad_theta.
void add_control_effort(const ControlledField& field, const Vector& b, double weight,
                        double& value, Vector& grad_b, Vector& grad_theta) {
  const MlpField& net = field.controller();
  const auto ev = net.eval_with_derivatives(b);
  Vector s(ev.output.size());
  for (Index i = 0; i < s.size(); ++i) s[i] = sign(ev.output[i]);
  value += weight * ev.output.lpNorm<1>();
  Vector w_input;
  Vector w_params;
  net.vjp(ev.cache, weight * s, w_input, w_params);
  grad_b += w_input;
  grad_theta += w_params;
}

std::unique_ptr<ControlledField> make_controlled(std::shared_ptr<const Plant> plant,
                                                 const std::vector<Index>& hidden,
                                                 std::uint64_t seed,
                                                 const LayerActivations& activations) {
  std::vector<Index> widths{plant->dim()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(plant->control_dim());
  std::vector<Activation> acts(widths.size() - 1, Activation::tanh);
  acts.back() = Activation::identity;
  if (!activations.empty()) {
    if (activations.size() != acts.size()) {
      throw ConfigError("controller needs " + std::to_string(acts.size()) + " activations (hidden layers and output), got " +
                        std::to_string(activations.size()));
    }
    acts = activations;
  }
  return std::make_unique<ControlledField>(std::move(plant),
                                           MlpField::random(widths, acts, seed));
}

void check_batch(std::span<const ShootingState> states) {
  if (states.empty()) throw ConfigError("loss needs at least one state");
  for (const auto& st : states) {
    if (st.intervals() != states.front().intervals()) {
      throw ConfigError("loss batch states must share one grid size");
    }
  }
}

}  // namespace

Curve parse_curve(std::string_view name, double alpha, double k) {
  if (name == "circle") return {CurveKind::circle, alpha, k};
  if (name == "circus") return {CurveKind::circus, alpha, k};
  throw ConfigError("unknown curve '" + std::string(name) + "' (expected circle or circus)");
}

std::string_view to_string(CurveKind kind) {
  return kind == CurveKind::circle ? "circle" : "circus";
}

double curve_value(const Curve& curve, double q, double p) {
  if (curve.kind == CurveKind::circle) return q * q + p * p - 1.0;
  const double r1 = std::hypot(q - curve.alpha, p);
  const double r2 = std::hypot(q + curve.alpha, p);
  return r1 * r2 - curve.k;
}

Vector curve_gradient(const Curve& curve, double q, double p) {
  Vector g(2);
  if (curve.kind == CurveKind::circle) {
    g << 2.0 * q, 2.0 * p;
    return g;
  }
  const double r1 = std::hypot(q - curve.alpha, p);
  const double r2 = std::hypot(q + curve.alpha, p);
  g.setZero();
  if (r1 > 0.0) {
    g[0] += (q - curve.alpha) / r1 * r2;
    g[1] += p / r1 * r2;
  }
  if (r2 > 0.0) {
    g[0] += (q + curve.alpha) / r2 * r1;
    g[1] += p / r2 * r1;
  }
  return g;
}

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

std::vector<Vector> uniform_initial_conditions(std::size_t count, Index dim, double lo, double hi,
                                               std::uint64_t seed) {
  if (!(hi > lo)) throw ConfigError("initial condition box needs lo < hi");
  if (dim < 1) throw ConfigError("initial condition dimension must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Vector> out(count, Vector(dim));
  for (auto& z : out) {
    for (Index i = 0; i < dim; ++i) z[i] = dist(rng);
  }
  return out;
}

std::unique_ptr<ControlledField> make_limit_cycle_field(const std::vector<Index>& hidden,
                                                        std::uint64_t seed,
                                                        const LayerActivations& activations) {
  return make_controlled(std::make_shared<MechanicalPlant>(), hidden, seed, activations);
}

LossEvaluation LimitCycleLoss::evaluate(const VectorField& field,
                                        std::span<const ShootingState> states) const {
  check_batch(states);
  if (field.dim() != 2) throw ConfigError("limit-cycle loss needs a 2-dimensional field");
  if (!(control_weight_ >= 0.0)) throw ConfigError("control weight must be non-negative");
  const ControlledField* controlled = controlled_or_null(field, control_weight_);
  const std::size_t intervals = states.front().intervals();
  const double scale = 1.0 / (2.0 * static_cast<double>(intervals * states.size()));

  LossEvaluation out;
  out.param_grad = Vector::Zero(field.param_count());
  out.node_grads.resize(states.size());
  double total = 0.0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    auto& grads = out.node_grads[s];
    grads.assign(states[s].b.size(), Vector::Zero(2));
    for (std::size_t n = 1; n < states[s].b.size(); ++n) {
      const Vector& b = states[s].b[n];
      const double sd = curve_value(curve_, b[0], b[1]);
      total += std::abs(sd);
      grads[n] = sign(sd) * curve_gradient(curve_, b[0], b[1]);
      if (controlled != nullptr) {
        add_control_effort(*controlled, b, control_weight_, total, grads[n], out.param_grad);
      }
      grads[n] *= scale;
    }
  }
  out.value = scale * total;
  out.param_grad *= scale;
  return out;
}

double smape(const std::vector<Vector>& reference, const std::vector<Vector>& test) {
  if (reference.size() != test.size()) {
    throw ConfigError("SMAPE needs equal lengths, got " + std::to_string(reference.size()) +
                      " and " + std::to_string(test.size()));
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].size() != test[i].size()) throw ConfigError("SMAPE sample size mismatch");
    for (Index j = 0; j < reference[i].size(); ++j) {
      const double x = reference[i][j];
      const double y = test[i][j];
      sum += 2.0 * std::abs(x - y) / (std::abs(x) + std::abs(y) + 1e-12);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

void LinearControlTask::validate() const {
  if (a.rows() != a.cols()) throw ConfigError("A must be square");
  if (b.rows() != a.rows()) {
    throw ConfigError("B has " + std::to_string(b.rows()) + " rows, A has " +
                      std::to_string(a.rows()));
  }
  if (b.cols() < 1) throw ConfigError("B needs at least one column");
  if (!(control_weight >= 0.0)) throw ConfigError("control weight must be non-negative");
  std::vector<bool> seen(static_cast<std::size_t>(a.rows()), false);
  for (const auto* part : {&sigma_r, &sigma_t}) {
    for (Index i : *part) {
      if (i < 0 || i >= a.rows()) throw ConfigError("partition index out of range");
      if (seen[static_cast<std::size_t>(i)]) throw ConfigError("partitions must be disjoint");
      seen[static_cast<std::size_t>(i)] = true;
    }
  }
}

void assign_default_partition(LinearControlTask& task) {
  task.sigma_r.clear();
  task.sigma_t.clear();
  const Index half = task.a.rows() / 2;
  for (Index i = 0; i < task.a.rows(); ++i) {
    const Index offset = i < half ? i : i - half;
    (offset % 2 == 0 ? task.sigma_t : task.sigma_r).push_back(i);
  }
}

LinearControlTask load_linear_system(const std::string& path_a, const std::string& path_b) {
  LinearControlTask task;
  task.a = load_matrix_csv(path_a);
  task.b = load_matrix_csv(path_b);
  assign_default_partition(task);
  task.validate();
  return task;
}

std::unique_ptr<ControlledField> make_linear_control_field(const LinearControlTask& task,
                                                           const std::vector<Index>& hidden,
                                                           std::uint64_t seed,
                                                           const LayerActivations& activations) {
  task.validate();
  return make_controlled(std::make_shared<LinearPlant>(task.a, task.b), hidden, seed, activations);
}

LossEvaluation LinearControlLoss::evaluate(const VectorField& field,
                                           std::span<const ShootingState> states) const {
  check_batch(states);
  const ControlledField* controlled = controlled_or_null(field, control_weight_);
  const std::size_t intervals = states.front().intervals();
  const double scale = 1.0 / static_cast<double>(intervals * states.size());

  LossEvaluation out;
  out.param_grad = Vector::Zero(field.param_count());
  out.node_grads.resize(states.size());
  double total = 0.0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    auto& grads = out.node_grads[s];
    grads.assign(states[s].b.size(), Vector::Zero(states[s].dim()));
    for (std::size_t n = 1; n < states[s].b.size(); ++n) {
      const Vector& b = states[s].b[n];
      for (const auto* part : {&sigma_r_, &sigma_t_}) {
        double sq = 0.0;
        for (Index i : *part) sq += b[i] * b[i];
        const double norm = std::sqrt(sq);
        total += norm;
        if (norm > 0.0) {
          for (Index i : *part) grads[n][i] += b[i] / norm;
        }
      }
      if (controlled != nullptr) {
        add_control_effort(*controlled, b, control_weight_, total, grads[n], out.param_grad);
      }
      grads[n] *= scale;
    }
  }
  out.value = scale * total;
  out.param_grad *= scale;
  return out;
}

LossEvaluation LinearNodeLoss::evaluate(const VectorField& field,
                                        std::span<const ShootingState> states) const {
  LossEvaluation out;
  out.param_grad = Vector::Zero(field.param_count());
  out.node_grads.resize(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (weights_.size() != states[s].b.size()) throw ConfigError("node weight count mismatch");
    out.node_grads[s] = weights_;
    for (std::size_t n = 0; n < weights_.size(); ++n) out.value += weights_[n].dot(states[s].b[n]);
  }
  return out;
}

}  // namespace timeshoot
