#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace mesa {

struct NelderMeadOptions {
  double f_tolerance = 1e-6;
  int max_evaluations = 400;
  // Fresh simplices tried from the best point once the spread has collapsed.
  int restarts = 2;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Box-constrained Nelder-Mead minimizer. Trial points are projected onto
/// [lower, upper]; the objective may return +inf for infeasible probes.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd &)> &f,
                             const Eigen::VectorXd &start,
                             const Eigen::VectorXd &step,
                             const Eigen::VectorXd &lower,
                             const Eigen::VectorXd &upper,
                             const NelderMeadOptions &options = {});

} // namespace mesa
