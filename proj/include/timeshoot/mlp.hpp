#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "timeshoot/linalg.hpp"

namespace timeshoot {

enum class Activation { tanh, softplus, identity };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

/// Fully connected network with per-layer activation and hand-written
/// forward/backward passes.
///
/// Parameters are flat-packed layer by layer in forward order, each layer's
/// weight matrix row-major followed by its bias. The same order is used by
/// `params`, `set_params`, `vjp_params` and the JSON document.
class MlpField {
 public:
  /// Activations recorded during `forward`; sufficient for every backward
  /// product without re-evaluating the network.
  struct Cache {
    std::vector<Vector> inputs;  // input of each layer
    std::vector<Vector> slopes;  // activation derivative at each layer's pre-activation
  };

  struct Evaluation {
    Vector output;
    Matrix jac_z;
    Cache cache;
  };

  MlpField(std::vector<Index> widths, std::vector<Activation> activations);

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases likewise.
  static MlpField random(std::vector<Index> widths, std::vector<Activation> activations,
                         std::uint64_t seed);

  Index input_dim() const { return widths_.front(); }
  Index output_dim() const { return widths_.back(); }
  Index param_count() const { return param_count_; }
  std::size_t layer_count() const { return weights_.size(); }
  const std::vector<Index>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }

  Vector params() const;
  void set_params(const Vector& theta);

  Vector forward(const Vector& z, Cache* cache = nullptr) const;
  /// Output, d output / d z and the cache, from one forward pass.
  Evaluation eval_with_derivatives(const Vector& z) const;

  Matrix jacobian(const Cache& cache) const;
  Vector vjp_input(const Cache& cache, const Vector& w) const;
  Vector vjp_params(const Cache& cache, const Vector& w) const;
  /// Both cotangents from a single backward pass.
  void vjp(const Cache& cache, const Vector& w, Vector& w_input, Vector& w_params) const;

  nlohmann::json to_json() const;
  static MlpField from_json(const nlohmann::json& doc);

 private:
  void check_input(const Vector& z) const;

  std::vector<Index> widths_;
  std::vector<Activation> activations_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  Index param_count_ = 0;
};

}  // namespace timeshoot
