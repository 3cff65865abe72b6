#include "mesa/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mesa {
namespace {

struct Vertex {
  Eigen::VectorXd x;
  double f;
};

} // namespace

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd &)> &f,
                             const Eigen::VectorXd &start,
                             const Eigen::VectorXd &step,
                             const Eigen::VectorXd &lower,
                             const Eigen::VectorXd &upper,
                             const NelderMeadOptions &options) {
  const Eigen::Index dim = start.size();
  NelderMeadResult result;
  auto project = [&](Eigen::VectorXd x) {
    return x.cwiseMax(lower).cwiseMin(upper).eval();
  };
  auto eval = [&](const Eigen::VectorXd &x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  Vertex best{project(start), 0.0};
  best.f = eval(best.x);

  for (int round = 0; round <= options.restarts; ++round) {
    std::vector<Vertex> simplex;
    simplex.push_back(best);
    const double shrink_step = std::pow(0.25, round);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Eigen::VectorXd x = best.x;
      x(i) += step(i) * shrink_step;
      if (x(i) > upper(i)) {
        x(i) = best.x(i) - step(i) * shrink_step;
      }
      x = project(x);
      simplex.push_back({x, eval(x)});
    }

    bool collapsed = false;
    while (result.evaluations < options.max_evaluations) {
      std::sort(simplex.begin(), simplex.end(),
                [](const Vertex &a, const Vertex &b) { return a.f < b.f; });
      const double spread = simplex.back().f - simplex.front().f;
      if (std::isfinite(simplex.back().f) && spread < options.f_tolerance) {
        collapsed = true;
        break;
      }
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
      for (Eigen::Index i = 0; i < dim; ++i) {
        centroid += simplex[i].x;
      }
      centroid /= static_cast<double>(dim);
      Vertex &worst = simplex.back();

      const Eigen::VectorXd xr = project(centroid + (centroid - worst.x));
      const double fr = eval(xr);
      if (fr < simplex.front().f) {
        const Eigen::VectorXd xe = project(centroid + 2.0 * (centroid - worst.x));
        const double fe = eval(xe);
        worst = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
        continue;
      }
      if (fr < simplex[dim - 1].f) {
        worst = {xr, fr};
        continue;
      }
      const bool outside = fr < worst.f;
      const Eigen::VectorXd xc =
          outside ? project(centroid + 0.5 * (xr - centroid))
                  : project(centroid + 0.5 * (worst.x - centroid));
      const double fc = eval(xc);
      if (fc < std::min(fr, worst.f)) {
        worst = {xc, fc};
        continue;
      }
      for (std::size_t i = 1; i < simplex.size(); ++i) {
        simplex[i].x = project(simplex[0].x + 0.5 * (simplex[i].x - simplex[0].x));
        simplex[i].f = eval(simplex[i].x);
      }
    }
    const auto it = std::min_element(simplex.begin(), simplex.end(),
                                     [](const Vertex &a, const Vertex &b) { return a.f < b.f; });
    const double gain = best.f - it->f;
    if (it->f < best.f) {
      best = *it;
    }
    result.converged = collapsed;
    if (!collapsed || result.evaluations >= options.max_evaluations) {
      break;
    }
    if (round > 0 && !(gain > options.f_tolerance)) {
      break;
    }
  }
  result.x = best.x;
  result.value = best.f;
  return result;
}

} // namespace mesa
