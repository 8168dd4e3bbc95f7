#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "timeshoot/linalg.hpp"
#include "timeshoot/mlp.hpp"

namespace timeshoot {

/// Differentiable dynamics f_theta(t, z).
///
/// Implementations are immutable between parameter updates and every const
/// member is safe to call concurrently. Derivative products have default
/// implementations in terms of `jac_z`; fields with cheaper structure
/// (networks, composed controllers) override them.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual Index dim() const = 0;
  virtual Index param_count() const { return 0; }

  virtual Vector eval(double t, const Vector& z) const = 0;
  /// Dense n_z x n_z matrix df/dz.
  virtual Matrix jac_z(double t, const Vector& z) const = 0;
  /// (df/dz) v
  virtual Vector jvp_z(double t, const Vector& z, const Vector& v) const;
  /// (df/dz)^T w
  virtual Vector vjp_z(double t, const Vector& z, const Vector& w) const;
  /// (df/dtheta)^T w in canonical flat parameter order.
  virtual Vector vjp_params(double t, const Vector& z, const Vector& w) const;

  /// f and df/dz from one shared evaluation.
  virtual void eval_with_jac(double t, const Vector& z, Vector& f, Matrix& jac) const;
  /// (df/dz)^T w and (df/dtheta)^T w from one shared evaluation.
  virtual void vjp(double t, const Vector& z, const Vector& w, Vector& wz, Vector& wtheta) const;

  virtual Vector params() const { return Vector(0); }
  virtual void set_params(const Vector& theta);
};

/// Van der Pol oscillator, z = (p, q): p' = q, q' = alpha (1 - p^2) q - p.
class VanDerPolField final : public VectorField {
 public:
  explicit VanDerPolField(double alpha = 1.0) : alpha_(alpha) {}

  Index dim() const override { return 2; }
  Vector eval(double t, const Vector& z) const override;
  Matrix jac_z(double t, const Vector& z) const override;

 private:
  double alpha_;
};

/// Rayleigh-Duffing system, z = (p, q): p' = q, q' = alpha p - 2 p^3 + (1 - q^2) q.
class RayleighDuffingField final : public VectorField {
 public:
  explicit RayleighDuffingField(double alpha = 1.0) : alpha_(alpha) {}

  Index dim() const override { return 2; }
  Vector eval(double t, const Vector& z) const override;
  Matrix jac_z(double t, const Vector& z) const override;

 private:
  double alpha_;
};

/// z' = A z. When `trainable`, the entries of A (row-major) are the parameters.
class LinearField final : public VectorField {
 public:
  explicit LinearField(Matrix a, bool trainable = false);

  Index dim() const override { return a_.rows(); }
  Index param_count() const override { return trainable_ ? a_.size() : 0; }
  Vector eval(double t, const Vector& z) const override;
  Matrix jac_z(double t, const Vector& z) const override;
  Vector jvp_z(double t, const Vector& z, const Vector& v) const override;
  Vector vjp_z(double t, const Vector& z, const Vector& w) const override;
  Vector vjp_params(double t, const Vector& z, const Vector& w) const override;
  Vector params() const override;
  void set_params(const Vector& theta) override;

  const Matrix& matrix() const { return a_; }

 private:
  Matrix a_;
  bool trainable_;
};

/// Autonomous neural field z' = net(z) with matching input and output widths.
class NeuralField final : public VectorField {
 public:
  explicit NeuralField(MlpField net);

  Index dim() const override { return net_.input_dim(); }
  Index param_count() const override { return net_.param_count(); }
  Vector eval(double t, const Vector& z) const override;
  Matrix jac_z(double t, const Vector& z) const override;
  Vector vjp_params(double t, const Vector& z, const Vector& w) const override;
  void eval_with_jac(double t, const Vector& z, Vector& f, Matrix& jac) const override;
  void vjp(double t, const Vector& z, const Vector& w, Vector& wz, Vector& wtheta) const override;
  Vector params() const override { return net_.params(); }
  void set_params(const Vector& theta) override { net_.set_params(theta); }

  const MlpField& net() const { return net_; }

 private:
  MlpField net_;
};

/// Controlled plant dynamics f(t, z, u) with analytic partial Jacobians.
class Plant {
 public:
  virtual ~Plant() = default;

  virtual Index dim() const = 0;
  virtual Index control_dim() const = 0;
  virtual Vector eval(double t, const Vector& z, const Vector& u) const = 0;
  virtual Matrix jac_z(double t, const Vector& z, const Vector& u) const = 0;
  virtual Matrix jac_u(double t, const Vector& z, const Vector& u) const = 0;
};

/// One degree-of-freedom mechanical system, z = (q, p): q' = p, p' = u.
class MechanicalPlant final : public Plant {
 public:
  Index dim() const override { return 2; }
  Index control_dim() const override { return 1; }
  Vector eval(double t, const Vector& z, const Vector& u) const override;
  Matrix jac_z(double t, const Vector& z, const Vector& u) const override;
  Matrix jac_u(double t, const Vector& z, const Vector& u) const override;
};

/// z' = A z + B u.
class LinearPlant final : public Plant {
 public:
  LinearPlant(Matrix a, Matrix b);

  Index dim() const override { return a_.rows(); }
  Index control_dim() const override { return b_.cols(); }
  Vector eval(double t, const Vector& z, const Vector& u) const override;
  Matrix jac_z(double t, const Vector& z, const Vector& u) const override;
  Matrix jac_u(double t, const Vector& z, const Vector& u) const override;

 private:
  Matrix a_;
  Matrix b_;
};

/// Closed loop f(t, z, pi_theta(z)); the parameters are the controller's.
class ControlledField final : public VectorField {
 public:
  ControlledField(std::shared_ptr<const Plant> plant, MlpField controller);

  Index dim() const override { return plant_->dim(); }
  Index param_count() const override { return controller_.param_count(); }
  Vector eval(double t, const Vector& z) const override;
  Matrix jac_z(double t, const Vector& z) const override;
  Vector vjp_params(double t, const Vector& z, const Vector& w) const override;
  void eval_with_jac(double t, const Vector& z, Vector& f, Matrix& jac) const override;
  void vjp(double t, const Vector& z, const Vector& w, Vector& wz, Vector& wtheta) const override;
  Vector params() const override { return controller_.params(); }
  void set_params(const Vector& theta) override { controller_.set_params(theta); }

  const Plant& plant() const { return *plant_; }
  const MlpField& controller() const { return controller_; }

 private:
  std::shared_ptr<const Plant> plant_;
  MlpField controller_;
};

/// Names accepted by `make_builtin`: vanderpol, rayleigh_duffing, linear,
/// linear_controlled, mechanical_1dof.
struct BuiltinSpec {
  std::string name;
  std::vector<double> params;
  Matrix a;
  Matrix b;
  std::optional<MlpField> controller;
};

std::unique_ptr<VectorField> make_builtin(const BuiltinSpec& spec);

}  // namespace timeshoot
