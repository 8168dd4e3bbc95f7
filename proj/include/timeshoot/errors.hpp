#pragma once

#include <stdexcept>
#include <string>

namespace timeshoot {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-parsable name used by the CLI for its one-line error report.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;

  virtual const char* kind() const noexcept = 0;

  /// Throws a copy of this error (same dynamic type) with `prefix`
  /// prepended to the message.
  [[noreturn]] virtual void rethrow_with_prefix(const std::string& prefix) const = 0;
};

template <class Derived>
class ErrorBase : public Error {
 public:
  using Error::Error;

  [[noreturn]] void rethrow_with_prefix(const std::string& prefix) const override {
    throw Derived(prefix + what());
  }
};

/// Invalid configuration, malformed input file or dimension mismatch.
class ConfigError final : public ErrorBase<ConfigError> {
 public:
  using ErrorBase::ErrorBase;
  const char* kind() const noexcept override { return "ConfigError"; }
};

/// A state or sensitivity component became NaN or infinite.
class NumericalBlowup final : public ErrorBase<NumericalBlowup> {
 public:
  using ErrorBase::ErrorBase;
  const char* kind() const noexcept override { return "NumericalBlowup"; }
};

/// Adaptive step size collapsed below machine resolution or the step budget ran out.
class StiffnessFailure final : public ErrorBase<StiffnessFailure> {
 public:
  using ErrorBase::ErrorBase;
  const char* kind() const noexcept override { return "StiffnessFailure"; }
};

/// The dense Newton reference was asked to assemble a matrix above its size guard.
class SizeGuardError final : public ErrorBase<SizeGuardError> {
 public:
  using ErrorBase::ErrorBase;
  const char* kind() const noexcept override { return "SizeGuardError"; }
};

/// Gradients were requested at shooting parameters that are not a root of the
/// matching function, or tracking diverged during training.
class StaleSolutionError final : public ErrorBase<StaleSolutionError> {
 public:
  using ErrorBase::ErrorBase;
  const char* kind() const noexcept override { return "StaleSolutionError"; }
};

}  // namespace timeshoot
