#include "timeshoot/grid.hpp"

#include <cmath>
#include <string>

#include "timeshoot/errors.hpp"

namespace timeshoot {

TimeGrid TimeGrid::uniform(double t0, double tN, std::size_t intervals) {
  if (intervals < 1) throw ConfigError("time grid needs at least one sub-interval");
  if (!(t0 < tN)) throw ConfigError("time grid needs t0 < tN");
  std::vector<double> nodes(intervals + 1);
  const double h = (tN - t0) / static_cast<double>(intervals);
  for (std::size_t n = 0; n < intervals; ++n) nodes[n] = t0 + static_cast<double>(n) * h;
  nodes[intervals] = tN;
  return TimeGrid(std::move(nodes));
}

TimeGrid TimeGrid::from_boundaries(std::vector<double> boundaries) {
  if (boundaries.size() < 2) throw ConfigError("time grid needs at least two boundaries");
  for (std::size_t n = 0; n < boundaries.size(); ++n) {
    if (!std::isfinite(boundaries[n])) {
      throw ConfigError("time grid boundary " + std::to_string(n) + " is not finite");
    }
    if (n > 0 && !(boundaries[n - 1] < boundaries[n])) {
      throw ConfigError("time grid boundaries must be strictly increasing (index " +
                        std::to_string(n) + ")");
    }
  }
  return TimeGrid(std::move(boundaries));
}

}  // namespace timeshoot
