#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace timeshoot {

/// Half-open-free closed interval [start, end] of integration. `end` may be
/// smaller than `start` for backward integrations inside the library.
struct TimeSpan {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
};

/// Strictly increasing node times t_0 < t_1 < ... < t_N.
class TimeGrid {
 public:
  /// Evenly spaced grid with `intervals` sub-intervals; the last node is exactly `tN`.
  static TimeGrid uniform(double t0, double tN, std::size_t intervals);
  static TimeGrid from_boundaries(std::vector<double> boundaries);

  std::size_t intervals() const { return nodes_.size() - 1; }
  std::size_t node_count() const { return nodes_.size(); }
  double t0() const { return nodes_.front(); }
  double tN() const { return nodes_.back(); }
  double node(std::size_t n) const { return nodes_[n]; }
  const std::vector<double>& nodes() const { return nodes_; }

  /// Sub-interval [t_n, t_{n+1}].
  TimeSpan interval(std::size_t n) const { return {nodes_[n], nodes_[n + 1]}; }

 private:
  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {}

  std::vector<double> nodes_;
};

}  // namespace timeshoot
