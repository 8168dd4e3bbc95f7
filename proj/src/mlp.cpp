#include "timeshoot/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "timeshoot/errors.hpp"

namespace timeshoot {

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
    case Activation::identity:
      return "identity";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace {

/// Applies the activation in place and stores its derivative in `slope`.
void activate(Activation act, Vector& x, Vector& slope) {
  slope.resize(x.size());
  switch (act) {
    case Activation::tanh:
      for (Index i = 0; i < x.size(); ++i) {
        const double y = std::tanh(x[i]);
        x[i] = y;
        slope[i] = 1.0 - y * y;
      }
      return;
    case Activation::softplus:
      for (Index i = 0; i < x.size(); ++i) {
        const double v = x[i];
        // log(1 + e^v) without overflow; derivative is the logistic function.
        x[i] = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);
        slope[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }
      return;
    case Activation::identity:
      slope.setOnes();
      return;
  }
}

}  // namespace

MlpField::MlpField(std::vector<Index> widths, std::vector<Activation> activations)
    : widths_(std::move(widths)), activations_(std::move(activations)) {
  if (widths_.size() < 2) throw ConfigError("MLP needs at least input and output widths");
  if (activations_.size() != widths_.size() - 1) {
    throw ConfigError("MLP needs one activation per layer (" + std::to_string(widths_.size() - 1) +
                      "), got " + std::to_string(activations_.size()));
  }
  for (Index w : widths_) {
    if (w < 1) throw ConfigError("MLP layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weights_.push_back(Matrix::Zero(widths_[l + 1], widths_[l]));
    biases_.push_back(Vector::Zero(widths_[l + 1]));
    param_count_ += widths_[l + 1] * widths_[l] + widths_[l + 1];
  }
}

MlpField MlpField::random(std::vector<Index> widths, std::vector<Activation> activations,
                          std::uint64_t seed) {
  MlpField net(std::move(widths), std::move(activations));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < net.weights_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.weights_[l].cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto& w = net.weights_[l];
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    for (Index r = 0; r < net.biases_[l].size(); ++r) net.biases_[l][r] = dist(rng);
  }
  return net;
}

Vector MlpField::params() const {
  Vector theta(param_count_);
  Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) theta[k++] = w(r, c);
    }
    theta.segment(k, biases_[l].size()) = biases_[l];
    k += biases_[l].size();
  }
  return theta;
}

void MlpField::set_params(const Vector& theta) {
  if (theta.size() != param_count_) {
    throw ConfigError("MLP expects " + std::to_string(param_count_) + " parameters, got " +
                      std::to_string(theta.size()));
  }
  Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = theta[k++];
    }
    biases_[l] = theta.segment(k, biases_[l].size());
    k += biases_[l].size();
  }
}

void MlpField::check_input(const Vector& z) const {
  if (z.size() != input_dim()) {
    throw ConfigError("MLP input has dimension " + std::to_string(z.size()) + ", expected " +
                      std::to_string(input_dim()));
  }
}

Vector MlpField::forward(const Vector& z, Cache* cache) const {
  check_input(z);
  if (cache != nullptr) {
    cache->inputs.resize(weights_.size());
    cache->slopes.resize(weights_.size());
  }
  Vector x = z;
  Vector slope;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vector pre = weights_[l] * x + biases_[l];
    activate(activations_[l], pre, slope);
    if (cache != nullptr) {
      cache->inputs[l] = std::move(x);
      cache->slopes[l] = slope;
    }
    x = std::move(pre);
  }
  return x;
}

MlpField::Evaluation MlpField::eval_with_derivatives(const Vector& z) const {
  Evaluation out;
  out.output = forward(z, &out.cache);
  out.jac_z = jacobian(out.cache);
  return out;
}

Matrix MlpField::jacobian(const Cache& cache) const {
  // Product of layer Jacobians diag(slope_l) W_l, accumulated from the output side.
  const std::size_t last = weights_.size() - 1;
  Matrix jac = cache.slopes[last].asDiagonal() * weights_[last];
  for (std::size_t l = last; l-- > 0;) {
    jac = (jac * cache.slopes[l].asDiagonal()) * weights_[l];
  }
  return jac;
}

Vector MlpField::vjp_input(const Cache& cache, const Vector& w) const {
  Vector delta = w;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    delta = weights_[l].transpose() * delta.cwiseProduct(cache.slopes[l]);
  }
  return delta;
}

Vector MlpField::vjp_params(const Cache& cache, const Vector& w) const {
  Vector w_input;
  Vector w_params;
  vjp(cache, w, w_input, w_params);
  return w_params;
}

void MlpField::vjp(const Cache& cache, const Vector& w, Vector& w_input, Vector& w_params) const {
  if (w.size() != output_dim()) {
    throw ConfigError("MLP cotangent has dimension " + std::to_string(w.size()) + ", expected " +
                      std::to_string(output_dim()));
  }
  w_params.resize(param_count_);
  Index end = param_count_;
  Vector delta = w;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const Vector g = delta.cwiseProduct(cache.slopes[l]);  // cotangent of pre-activation
    const Index rows = weights_[l].rows();
    const Index cols = weights_[l].cols();
    end -= rows;
    w_params.segment(end, rows) = g;
    end -= rows * cols;
    // Row-major outer product g x^T.
    const Vector& x = cache.inputs[l];
    for (Index r = 0; r < rows; ++r) {
      w_params.segment(end + r * cols, cols) = g[r] * x;
    }
    delta = weights_[l].transpose() * g;
  }
  w_input = std::move(delta);
}

nlohmann::json MlpField::to_json() const {
  nlohmann::json doc;
  doc["widths"] = widths_;
  std::vector<std::string> acts;
  for (auto a : activations_) acts.emplace_back(to_string(a));
  doc["activations"] = acts;
  const Vector theta = params();
  doc["params"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  return doc;
}

MlpField MlpField::from_json(const nlohmann::json& doc) {
  try {
    std::vector<Activation> acts;
    for (const auto& a : doc.at("activations")) acts.push_back(parse_activation(a.get<std::string>()));
    MlpField net(doc.at("widths").get<std::vector<Index>>(), std::move(acts));
    const auto flat = doc.at("params").get<std::vector<double>>();
    net.set_params(Eigen::Map<const Vector>(flat.data(), static_cast<Index>(flat.size())));
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed MLP document: ") + e.what());
  }
}

}  // namespace timeshoot
