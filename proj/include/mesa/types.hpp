#pragma once

#include <Eigen/Dense>

namespace mesa {

using Index = Eigen::Index;

// N x 2 planar coordinates, one site per row.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

} // namespace mesa
