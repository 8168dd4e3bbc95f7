#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace timeshoot::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kSuccess = 0,
  kConfigFailure = 2,
  kNumericalFailure = 3,
  kCheckFailure = 4,
};

struct RunConfig {
  std::string command;
  std::filesystem::path config;
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> method;
  /// gradcheck: perturb the converged state before taking gradients.
  bool unconverged = false;
  /// control: run the sequential baseline ("rk4" or "dopri5") instead of tracking.
  std::optional<std::string> baseline;
};

/// Runs one subcommand. Reports go to `out`; failures become one line on
/// `err` of the form `error kind=<Kind> message="<text>"`.
int run(const RunConfig& rc, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to `run`.
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace timeshoot::cli
