#include "mesa/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "mesa/error.hpp"

namespace mesa {

double exp_kernel(double d, double r) {
  require(std::isfinite(r) && r > 0.0, ErrorCode::invalid_parameter,
          "kernel range must be positive and finite");
  require(std::isfinite(d) && d >= 0.0, ErrorCode::invalid_parameter,
          "kernel distance must be nonnegative and finite");
  return std::exp(-d / r);
}

namespace {

double squared_distance(const Coords &a, Index i, const Coords &b, Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  return dx * dx + dy * dy;
}

double coordinate_span(const Coords &sites) {
  const Eigen::RowVector2d lo = sites.colwise().minCoeff();
  const Eigen::RowVector2d hi = sites.colwise().maxCoeff();
  return (hi - lo).maxCoeff();
}

} // namespace

Coords kmeans_centers(const Coords &sites, Index k, std::uint64_t seed,
                      const KnotOptions &options) {
  const Index n = sites.rows();
  require(k >= 1, ErrorCode::invalid_parameter, "knot count must be >= 1");
  require(k <= n, ErrorCode::invalid_parameter,
          "knot count " + std::to_string(k) + " exceeds site count " +
              std::to_string(n));
  require(sites.allFinite(), ErrorCode::invalid_input,
          "non-finite coordinate in knot selection");

  std::mt19937_64 rng(seed);
  Coords centers(k, 2);

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centers.row(0) = sites.row(first(rng));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(sites, i, centers, c - 1));
      total += d2[i];
    }
    Index pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      Index last_positive = 0;
      bool found = false;
      for (Index i = 0; i < n && !found; ++i) {
        if (d2[i] <= 0.0) {
          continue;
        }
        last_positive = i;
        acc += d2[i];
        found = acc > target;
      }
      pick = last_positive;
    } else {
      pick = first(rng);
    }
    centers.row(c) = sites.row(pick);
  }

  // Lloyd iterations.
  const double tol = options.relative_tolerance * coordinate_span(sites);
  std::vector<Index> assign(n, 0);
  std::vector<double> assign_d2(n, 0.0);
  Coords sums(k, 2);
  std::vector<Index> counts(k);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      Index arg = 0;
      for (Index c = 0; c < k; ++c) {
        const double d = squared_distance(sites, i, centers, c);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
      assign_d2[i] = best;
    }
    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += sites.row(i);
      ++counts[assign[i]];
    }
    // Empty clusters take over the point farthest from its current center.
    for (Index c = 0; c < k; ++c) {
      if (counts[c] != 0) {
        continue;
      }
      const auto far = std::distance(
          assign_d2.begin(), std::max_element(assign_d2.begin(), assign_d2.end()));
      const Index owner = assign[far];
      sums.row(owner) -= sites.row(far);
      --counts[owner];
      sums.row(c) = sites.row(far);
      counts[c] = 1;
      assign[far] = c;
      assign_d2[far] = 0.0;
    }
    double moved = 0.0;
    for (Index c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        continue;
      }
      const Eigen::RowVector2d next = sums.row(c) / static_cast<double>(counts[c]);
      moved = std::max(moved, (next - centers.row(c)).norm());
      centers.row(c) = next;
    }
    if (moved <= tol) {
      break;
    }
  }
  return centers;
}

KnotSet select_knots(const Coords &sites, Index k, std::uint64_t seed,
                     std::size_t total_sites, const KnotOptions &options) {
  KnotSet knots;
  knots.centers = kmeans_centers(sites, k, seed, options);
  if (total_sites == 0) {
    total_sites = static_cast<std::size_t>(sites.rows());
  }
  if (total_sites <= options.mst_site_limit) {
    knots.range_source = RangeSource::sites;
    knots.range = mst_range(sites);
  } else {
    knots.range_source = RangeSource::knots;
    knots.range = mst_range(knots.centers);
  }
  return knots;
}

KnotEigen knot_eigen(const KnotSet &knots, int max_pairs) {
  const Index l = knots.size();
  require(l >= 2, ErrorCode::invalid_parameter,
          "knot eigendecomposition needs at least 2 knots");
  require(knots.centers.allFinite(), ErrorCode::invalid_input,
          "non-finite knot coordinate");
  require(std::isfinite(knots.range) && knots.range > 0.0,
          ErrorCode::invalid_parameter, "knot range must be positive");
  require(max_pairs >= 1, ErrorCode::invalid_parameter,
          "max eigenpairs must be >= 1");

  const ProximityMatrix cl = proximity_matrix(knots.centers, knots.range, false);
  KnotEigen eig;
  eig.col_mean = cl.values.colwise().mean();

  // M C M with M = I - 11'/L, then explicit symmetrization.
  Eigen::MatrixXd centered = cl.values;
  centered.rowwise() -= eig.col_mean;
  const Eigen::VectorXd row_mean = centered.rowwise().mean();
  centered.colwise() -= row_mean;
  centered = 0.5 * (centered + centered.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(centered);
  require(solver.info() == Eigen::Success, ErrorCode::singular_system,
          "knot eigendecomposition did not converge");
  // Ascending order from the solver; walk it backwards.
  const Eigen::VectorXd &values = solver.eigenvalues();
  const double top = values(l - 1);
  const double floor = kEigenvalueFloor * std::max(top, 0.0);
  Index keep = 0;
  while (keep < l && keep < max_pairs && values(l - 1 - keep) > floor &&
         top > 0.0) {
    ++keep;
  }
  if (keep == 0) {
    std::ostringstream msg;
    msg << "no positive eigenvalue for " << l << " knots at range "
        << knots.range << " (largest eigenvalue " << top << ")";
    fail(ErrorCode::empty_basis, msg.str());
  }

  eig.values.resize(keep);
  eig.vectors.resize(l, keep);
  for (Index j = 0; j < keep; ++j) {
    eig.values(j) = values(l - 1 - j);
    Eigen::VectorXd v = solver.eigenvectors().col(l - 1 - j);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) {
      v = -v;
    }
    eig.vectors.col(j) = v;
  }
  return eig;
}

const char *to_string(ScalingMode mode) {
  return mode == ScalingMode::as_printed ? "as_printed" : "n_over_l";
}

ScalingMode scaling_mode_from_string(const std::string &name) {
  if (name == "as_printed") {
    return ScalingMode::as_printed;
  }
  if (name == "n_over_l") {
    return ScalingMode::n_over_l;
  }
  fail(ErrorCode::invalid_parameter, "unknown scaling mode '" + name + "'");
}

Eigen::VectorXd approx_eigenvalues(const KnotEigen &eig, std::size_t n,
                                   ScalingMode mode) {
  const auto l = static_cast<std::size_t>(eig.knot_count());
  require(n >= l, ErrorCode::invalid_parameter,
          "sample size " + std::to_string(n) + " is below knot count " +
              std::to_string(l));
  const double nd = static_cast<double>(n);
  const double ld = static_cast<double>(l);
  const double factor = mode == ScalingMode::as_printed ? (nd + ld) / ld : nd / ld;
  Eigen::VectorXd out = (factor * (eig.values.array() + 1.0) - 1.0).matrix();
  const double floor = kEigenvalueFloor * std::max(out.size() ? out(0) : 0.0, 0.0);
  Index keep = 0;
  while (keep < out.size() && out(keep) > floor) {
    ++keep;
  }
  return out.head(keep);
}

BasisFactory::BasisFactory(KnotSet knots, KnotEigen eig, std::size_t n,
                           ScalingMode mode)
    : knots_(std::move(knots)), eig_(std::move(eig)), n_(n), mode_(mode) {
  lambda_hat_ = approx_eigenvalues(eig_, n_, mode_);
  require(lambda_hat_.size() > 0, ErrorCode::empty_basis,
          "every approximate eigenvalue fell below the floor");
  if (lambda_hat_.size() < eig_.size()) {
    const Index keep = lambda_hat_.size();
    eig_.values = eig_.values.head(keep).eval();
    eig_.vectors = eig_.vectors.leftCols(keep).eval();
  }
  projection_ = eig_.vectors *
                (eig_.values.array() + 1.0).inverse().matrix().asDiagonal();
}

RowMatrix BasisFactory::nystrom_block(const Coords &coords) const {
  require(coords.allFinite(), ErrorCode::invalid_input,
          "non-finite coordinate in basis evaluation");
  const Index nb = coords.rows();
  const Index l = knots_.size();
  const Index width = projection_.cols();
  const double r = knots_.range;
  RowMatrix out = RowMatrix::Zero(nb, width);
  Eigen::RowVectorXd diff(l);
  for (Index i = 0; i < nb; ++i) {
    for (Index k = 0; k < l; ++k) {
      const double dx = coords(i, 0) - knots_.centers(k, 0);
      const double dy = coords(i, 1) - knots_.centers(k, 1);
      diff(k) = std::exp(-std::sqrt(dx * dx + dy * dy) / r) - eig_.col_mean(k);
    }
    auto row = out.row(i);
    for (Index k = 0; k < l; ++k) {
      row.noalias() += diff(k) * projection_.row(k);
    }
  }
  return out;
}

BasisFactory make_factory(const KnotSet &knots, std::size_t n, ScalingMode mode,
                          int max_pairs) {
  return BasisFactory(knots, knot_eigen(knots, max_pairs), n, mode);
}

ProximityMatrix proximity_matrix(const Coords &coords, double range,
                                 bool zero_diagonal) {
  require(std::isfinite(range) && range > 0.0, ErrorCode::invalid_parameter,
          "kernel range must be positive and finite");
  require(coords.allFinite(), ErrorCode::invalid_input,
          "non-finite coordinate in proximity matrix");
  const Index n = coords.rows();
  ProximityMatrix out;
  out.zero_diagonal = zero_diagonal;
  out.values.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    out.values(j, j) = zero_diagonal ? 0.0 : 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double dx = coords(i, 0) - coords(j, 0);
      const double dy = coords(i, 1) - coords(j, 1);
      const double c = std::exp(-std::sqrt(dx * dx + dy * dy) / range);
      out.values(i, j) = c;
      out.values(j, i) = c;
    }
  }
  return out;
}

double mc_scale(const ProximityMatrix &c0) {
  const double total = c0.values.sum();
  require(total > 0.0, ErrorCode::degenerate_weights,
          "proximity weights sum to zero");
  return static_cast<double>(c0.size()) / total;
}

double moran_coefficient(const Eigen::VectorXd &values,
                         const ProximityMatrix &c0) {
  const Index n = values.size();
  require(n >= 2, ErrorCode::invalid_input,
          "Moran coefficient needs at least 2 values");
  require(c0.size() == n, ErrorCode::invalid_input,
          "proximity matrix order does not match the value count");
  const double scale = mc_scale(c0);
  const Eigen::VectorXd centered = values.array() - values.mean();
  const double denom = centered.squaredNorm();
  require(denom > 0.0, ErrorCode::degenerate_input,
          "values are constant; Moran coefficient undefined");
  const double numer = centered.dot(c0.values * centered);
  return scale * numer / denom;
}

double expected_mc(std::span<const double> lambdas, double alpha,
                   double mc_scale) {
  require(!lambdas.empty(), ErrorCode::invalid_input,
          "expected Moran coefficient needs at least one eigenvalue");
  std::vector<double> log_l(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    require(lambdas[i] > 0.0 && std::isfinite(lambdas[i]),
            ErrorCode::invalid_input, "eigenvalues must be positive and finite");
    log_l[i] = std::log(lambdas[i]);
  }
  auto log_sum_exp = [&](double power) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : log_l) {
      top = std::max(top, power * v);
    }
    double acc = 0.0;
    for (double v : log_l) {
      acc += std::exp(power * v - top);
    }
    return top + std::log(acc);
  };
  const double log_ratio =
      log_sum_exp(2.0 * alpha + 1.0) - log_sum_exp(2.0 * alpha);
  return mc_scale * std::exp(log_ratio);
}

} // namespace mesa
