#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mesa/terms.hpp"

namespace mesa {

/// Inner-product sufficient statistics of the additive model:
/// y'y, X'y, A_p'y, X'X, X'A_p and A_p'A_q (p <= q only).
///
/// A store is a plain sum over data blocks, so stores built from disjoint
/// row sets merge by addition.
struct InnerProductStore {
  double yy = 0.0;
  Eigen::VectorXd xy;                // K
  std::vector<Eigen::VectorXd> ay;   // L_p each
  Eigen::MatrixXd xx;                // K x K
  std::vector<Eigen::MatrixXd> xa;   // K x L_p each
  std::vector<Eigen::MatrixXd> aa;   // upper triangle of term pairs, see pair_index
  std::size_t n_seen = 0;

  Index fixed_count() const { return xx.rows(); }
  Index term_count() const { return static_cast<Index>(ay.size()); }
  Index width(Index p) const { return ay[p].size(); }
  std::vector<Index> widths() const;
  // K + sum L_p.
  Index order() const;

  // Slot of A_p'A_q for p <= q in `aa`.
  std::size_t pair_index(Index p, Index q) const;
  const Eigen::MatrixXd &cross(Index p, Index q) const {
    return aa[pair_index(p, q)];
  }
  Eigen::MatrixXd &cross(Index p, Index q) { return aa[pair_index(p, q)]; }

  bool same_shape(const InnerProductStore &other) const;
};

InnerProductStore init_store(Index k, const std::vector<Index> &widths);

/// Adds one block's contribution. `x` is n_b x K, `blocks[p]` is A_p for the
/// same rows.
void accumulate_block(InnerProductStore &store, const Eigen::MatrixXd &x,
                      const Eigen::VectorXd &y,
                      const std::vector<TermBlock> &blocks);

void merge_into(InnerProductStore &target, const InnerProductStore &other);
InnerProductStore merge_stores(const InnerProductStore &a,
                               const InnerProductStore &b);

/// Closes accumulation: requires data, checks the expected row count when
/// nonzero, and makes X'X and every A_p'A_p exactly symmetric.
void finalize_store(InnerProductStore &store, std::size_t expected_rows = 0);

/// Smallest eigenvalue of a symmetric matrix relative to its trace; used by
/// the PSD checks on X'X and A_p'A_p.
double relative_min_eigenvalue(const Eigen::MatrixXd &m);

inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Versioned binary sidecar so refits can skip the streaming pass.
void write_store(const std::string &path, const InnerProductStore &store);
InnerProductStore read_store(const std::string &path);

} // namespace mesa
