#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mpk {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Point clouds, one point per row.
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Images and masks are (rows = H, cols = W); pixel (x, y) is m(y, x).
using Image = Eigen::MatrixXd;

}  // namespace mpk
