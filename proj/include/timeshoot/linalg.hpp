#pragma once

#include <Eigen/Dense>

namespace timeshoot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace timeshoot
