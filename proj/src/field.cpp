#include "timeshoot/field.hpp"

#include <string>

#include "timeshoot/errors.hpp"

namespace timeshoot {

Vector VectorField::jvp_z(double t, const Vector& z, const Vector& v) const {
  return jac_z(t, z) * v;
}

Vector VectorField::vjp_z(double t, const Vector& z, const Vector& w) const {
  return jac_z(t, z).transpose() * w;
}

Vector VectorField::vjp_params(double, const Vector&, const Vector&) const {
  return Vector::Zero(param_count());
}

void VectorField::eval_with_jac(double t, const Vector& z, Vector& f, Matrix& jac) const {
  f = eval(t, z);
  jac = jac_z(t, z);
}

void VectorField::vjp(double t, const Vector& z, const Vector& w, Vector& wz,
                      Vector& wtheta) const {
  wz = vjp_z(t, z, w);
  wtheta = vjp_params(t, z, w);
}

void VectorField::set_params(const Vector& theta) {
  if (theta.size() != 0) throw ConfigError("field has no trainable parameters");
}

// --- Van der Pol ------------------------------------------------------------

Vector VanDerPolField::eval(double, const Vector& z) const {
  const double p = z[0];
  const double q = z[1];
  return Vector{{q, alpha_ * (1.0 - p * p) * q - p}};
}

Matrix VanDerPolField::jac_z(double, const Vector& z) const {
  const double p = z[0];
  const double q = z[1];
  Matrix j(2, 2);
  j << 0.0, 1.0, -2.0 * alpha_ * p * q - 1.0, alpha_ * (1.0 - p * p);
  return j;
}

// --- Rayleigh-Duffing --------------------------------------------------------

Vector RayleighDuffingField::eval(double, const Vector& z) const {
  const double p = z[0];
  const double q = z[1];
  return Vector{{q, alpha_ * p - 2.0 * p * p * p + (1.0 - q * q) * q}};
}

Matrix RayleighDuffingField::jac_z(double, const Vector& z) const {
  const double p = z[0];
  const double q = z[1];
  Matrix j(2, 2);
  j << 0.0, 1.0, alpha_ - 6.0 * p * p, 1.0 - 3.0 * q * q;
  return j;
}

// --- Linear ----------------------------------------------------------------

LinearField::LinearField(Matrix a, bool trainable) : a_(std::move(a)), trainable_(trainable) {
  if (a_.rows() == 0 || a_.rows() != a_.cols()) {
    throw ConfigError("linear field needs a non-empty square matrix, got " +
                      std::to_string(a_.rows()) + "x" + std::to_string(a_.cols()));
  }
}

Vector LinearField::eval(double, const Vector& z) const { return a_ * z; }

Matrix LinearField::jac_z(double, const Vector&) const { return a_; }

Vector LinearField::jvp_z(double, const Vector&, const Vector& v) const { return a_ * v; }

Vector LinearField::vjp_z(double, const Vector&, const Vector& w) const {
  return a_.transpose() * w;
}

Vector LinearField::vjp_params(double, const Vector& z, const Vector& w) const {
  if (!trainable_) return Vector(0);
  // d(Az)_i / dA_ij = z_j, flattened row-major.
  Vector g(a_.size());
  const Index n = a_.rows();
  for (Index i = 0; i < n; ++i) g.segment(i * n, n) = w[i] * z;
  return g;
}

Vector LinearField::params() const {
  if (!trainable_) return Vector(0);
  Vector theta(a_.size());
  const Index n = a_.rows();
  for (Index i = 0; i < n; ++i) theta.segment(i * n, n) = a_.row(i).transpose();
  return theta;
}

void LinearField::set_params(const Vector& theta) {
  if (!trainable_) {
    VectorField::set_params(theta);
    return;
  }
  if (theta.size() != a_.size()) throw ConfigError("linear field parameter size mismatch");
  const Index n = a_.rows();
  for (Index i = 0; i < n; ++i) a_.row(i) = theta.segment(i * n, n).transpose();
}

// --- Neural ----------------------------------------------------------------

NeuralField::NeuralField(MlpField net) : net_(std::move(net)) {
  if (net_.input_dim() != net_.output_dim()) {
    throw ConfigError("neural field needs equal input and output widths");
  }
}

Vector NeuralField::eval(double, const Vector& z) const { return net_.forward(z); }

Matrix NeuralField::jac_z(double, const Vector& z) const {
  return net_.eval_with_derivatives(z).jac_z;
}

Vector NeuralField::vjp_params(double, const Vector& z, const Vector& w) const {
  MlpField::Cache cache;
  net_.forward(z, &cache);
  return net_.vjp_params(cache, w);
}

void NeuralField::eval_with_jac(double, const Vector& z, Vector& f, Matrix& jac) const {
  auto ev = net_.eval_with_derivatives(z);
  f = std::move(ev.output);
  jac = std::move(ev.jac_z);
}

void NeuralField::vjp(double, const Vector& z, const Vector& w, Vector& wz,
                      Vector& wtheta) const {
  MlpField::Cache cache;
  net_.forward(z, &cache);
  net_.vjp(cache, w, wz, wtheta);
}

// --- Plants ----------------------------------------------------------------

Vector MechanicalPlant::eval(double, const Vector& z, const Vector& u) const {
  return Vector{{z[1], u[0]}};
}

Matrix MechanicalPlant::jac_z(double, const Vector&, const Vector&) const {
  Matrix j(2, 2);
  j << 0.0, 1.0, 0.0, 0.0;
  return j;
}

Matrix MechanicalPlant::jac_u(double, const Vector&, const Vector&) const {
  Matrix j(2, 1);
  j << 0.0, 1.0;
  return j;
}

LinearPlant::LinearPlant(Matrix a, Matrix b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() == 0 || a_.rows() != a_.cols()) {
    throw ConfigError("linear plant needs a non-empty square A, got " + std::to_string(a_.rows()) +
                      "x" + std::to_string(a_.cols()));
  }
  if (b_.rows() != a_.rows() || b_.cols() == 0) {
    throw ConfigError("linear plant B has " + std::to_string(b_.rows()) + " rows, expected " +
                      std::to_string(a_.rows()));
  }
}

Vector LinearPlant::eval(double, const Vector& z, const Vector& u) const {
  return a_ * z + b_ * u;
}

Matrix LinearPlant::jac_z(double, const Vector&, const Vector&) const { return a_; }

Matrix LinearPlant::jac_u(double, const Vector&, const Vector&) const { return b_; }

// --- Controlled --------------------------------------------------------------

ControlledField::ControlledField(std::shared_ptr<const Plant> plant, MlpField controller)
    : plant_(std::move(plant)), controller_(std::move(controller)) {
  if (controller_.input_dim() != plant_->dim()) {
    throw ConfigError("controller input width " + std::to_string(controller_.input_dim()) +
                      " does not match plant state dimension " + std::to_string(plant_->dim()));
  }
  if (controller_.output_dim() != plant_->control_dim()) {
    throw ConfigError("controller output width " + std::to_string(controller_.output_dim()) +
                      " does not match plant control dimension " +
                      std::to_string(plant_->control_dim()));
  }
}

Vector ControlledField::eval(double t, const Vector& z) const {
  return plant_->eval(t, z, controller_.forward(z));
}

Matrix ControlledField::jac_z(double t, const Vector& z) const {
  Vector f;
  Matrix jac;
  eval_with_jac(t, z, f, jac);
  return jac;
}

Vector ControlledField::vjp_params(double t, const Vector& z, const Vector& w) const {
  Vector wz;
  Vector wtheta;
  vjp(t, z, w, wz, wtheta);
  return wtheta;
}

void ControlledField::eval_with_jac(double t, const Vector& z, Vector& f, Matrix& jac) const {
  const auto ctrl = controller_.eval_with_derivatives(z);
  f = plant_->eval(t, z, ctrl.output);
  jac = plant_->jac_z(t, z, ctrl.output) + plant_->jac_u(t, z, ctrl.output) * ctrl.jac_z;
}

void ControlledField::vjp(double t, const Vector& z, const Vector& w, Vector& wz,
                          Vector& wtheta) const {
  MlpField::Cache cache;
  const Vector u = controller_.forward(z, &cache);
  const Vector wu = plant_->jac_u(t, z, u).transpose() * w;
  Vector wz_ctrl;
  controller_.vjp(cache, wu, wz_ctrl, wtheta);
  wz = plant_->jac_z(t, z, u).transpose() * w + wz_ctrl;
}

// --- Factory ----------------------------------------------------------------

namespace {

double param_or(const std::vector<double>& params, std::size_t i, double fallback) {
  return i < params.size() ? params[i] : fallback;
}

MlpField require_controller(const BuiltinSpec& spec) {
  if (!spec.controller) throw ConfigError(spec.name + " needs a controller network");
  return *spec.controller;
}

}  // namespace

std::unique_ptr<VectorField> make_builtin(const BuiltinSpec& spec) {
  if (spec.name == "vanderpol") {
    return std::make_unique<VanDerPolField>(param_or(spec.params, 0, 1.0));
  }
  if (spec.name == "rayleigh_duffing") {
    return std::make_unique<RayleighDuffingField>(param_or(spec.params, 0, 1.0));
  }
  if (spec.name == "linear") {
    return std::make_unique<LinearField>(spec.a);
  }
  if (spec.name == "linear_controlled") {
    auto plant = std::make_shared<LinearPlant>(spec.a, spec.b);
    return std::make_unique<ControlledField>(std::move(plant), require_controller(spec));
  }
  if (spec.name == "mechanical_1dof") {
    return std::make_unique<ControlledField>(std::make_shared<MechanicalPlant>(),
                                             require_controller(spec));
  }
  throw ConfigError("unknown builtin field '" + spec.name + "'");
}

}  // namespace timeshoot
