#pragma once

#include <Eigen/Dense>

namespace purefed {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace purefed
