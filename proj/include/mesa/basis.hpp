#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mesa/types.hpp"

namespace mesa {

/// Exponential distance-decay kernel exp(-d / r).
double exp_kernel(double d, double r);

/// Length of the longest edge of a Euclidean minimum spanning tree.
///
/// Exact; uses Boruvka rounds driven by a k-d tree nearest-foreign-neighbour
/// search, so it stays practical for a few hundred thousand points.
double mst_range(const Coords &points);

enum class RangeSource { sites, knots };

struct KnotOptions {
  int max_iterations = 100;
  // Lloyd iterations stop once no center moves more than this times the
  // coordinate span.
  double relative_tolerance = 1e-8;
  // Above this many sites the kernel range comes from the knot centers.
  std::size_t mst_site_limit = 100000;
};

struct KnotSet {
  Coords centers;
  double range = 0.0;
  RangeSource range_source = RangeSource::sites;

  Index size() const { return centers.rows(); }
};

/// k-means++ seeded Lloyd iteration. Deterministic for a given seed.
Coords kmeans_centers(const Coords &sites, Index k, std::uint64_t seed,
                      const KnotOptions &options = {});

/// Knot centers plus kernel range. `total_sites` is the size of the full
/// dataset when `sites` is only a sample of it (0 means sites.rows()); it
/// decides whether the range is taken over the sites or over the knots.
KnotSet select_knots(const Coords &sites, Index k, std::uint64_t seed,
                     std::size_t total_sites = 0,
                     const KnotOptions &options = {});

/// Retained positive eigenpairs of the doubly centered knot kernel
/// M C_L M, with C_L carrying a unit diagonal.
struct KnotEigen {
  Eigen::MatrixXd vectors;     // L x L_pos, orthonormal, zero column sums
  Eigen::VectorXd values;      // L_pos, strictly descending
  Eigen::RowVectorXd col_mean; // 1' C_L / L

  Index knot_count() const { return vectors.rows(); }
  Index size() const { return values.size(); }
};

inline constexpr int kDefaultMaxEigenpairs = 200;
inline constexpr double kEigenvalueFloor = 1e-8;

KnotEigen knot_eigen(const KnotSet &knots,
                     int max_pairs = kDefaultMaxEigenpairs);

enum class ScalingMode { as_printed, n_over_l };

const char *to_string(ScalingMode mode);
ScalingMode scaling_mode_from_string(const std::string &name);

/// Approximate full-sample eigenvalues from the knot spectrum. The result is
/// a prefix of `eig.values` order; trailing entries at or below the floor
/// are dropped.
Eigen::VectorXd approx_eigenvalues(const KnotEigen &eig, std::size_t n,
                                   ScalingMode mode);

/// Generates approximate Moran eigenvector rows for arbitrary sites.
/// Immutable after construction; safe to share across threads.
class BasisFactory {
public:
  BasisFactory() = default;
  BasisFactory(KnotSet knots, KnotEigen eig, std::size_t n,
               ScalingMode mode = ScalingMode::as_printed);

  const KnotSet &knots() const { return knots_; }
  const KnotEigen &eigen() const { return eig_; }
  std::size_t sample_size() const { return n_; }
  ScalingMode scaling_mode() const { return mode_; }
  const Eigen::VectorXd &lambda_hat() const { return lambda_hat_; }
  Index size() const { return lambda_hat_.size(); }

  /// Rows [c(s)' - col_mean] E_L (Lambda_L + I)^{-1}. Every row is computed
  /// with the same fixed-order arithmetic, so a site's row does not depend on
  /// the block it arrives in.
  RowMatrix nystrom_block(const Coords &coords) const;

private:
  KnotSet knots_;
  KnotEigen eig_;
  std::size_t n_ = 0;
  ScalingMode mode_ = ScalingMode::as_printed;
  Eigen::VectorXd lambda_hat_;
  RowMatrix projection_; // L x L_pos, E_L (Lambda_L + I)^{-1}
};

/// Convenience: knots -> eigenpairs -> factory.
BasisFactory make_factory(const KnotSet &knots, std::size_t n,
                          ScalingMode mode = ScalingMode::as_printed,
                          int max_pairs = kDefaultMaxEigenpairs);

/// Dense kernel matrix among sites. With zero_diagonal the diagonal is 0
/// (the C0 used by the Moran coefficient); otherwise it is 1.
struct ProximityMatrix {
  Eigen::MatrixXd values;
  bool zero_diagonal = true;

  Index size() const { return values.rows(); }
};

ProximityMatrix proximity_matrix(const Coords &coords, double range,
                                 bool zero_diagonal = true);

/// n / 1'C0 1.
double mc_scale(const ProximityMatrix &c0);

/// Moran coefficient of `values` under proximity c0.
double moran_coefficient(const Eigen::VectorXd &values,
                         const ProximityMatrix &c0);

/// Expected Moran coefficient of E Lambda^alpha u with u ~ N(0, I):
/// mc_scale * sum(l^(2a+1)) / sum(l^(2a)), evaluated in log space.
double expected_mc(std::span<const double> lambdas, double alpha,
                   double mc_scale = 1.0);

} // namespace mesa
