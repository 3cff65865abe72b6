#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mesa/basis.hpp"
#include "mesa/memory_probe.hpp"
#include "mesa/types.hpp"

namespace mesa {

enum class TermKind { residual_spatial, svc, group };

const char *to_string(TermKind kind);

/// One additive random-effect term.
struct TermSpec {
  TermKind kind = TermKind::residual_spatial;
  std::string name;
  // Column of DataBlock::covariates scaling an SVC term.
  Index covariate = -1;
  // Column of DataBlock::labels for a group term.
  Index label_column = -1;
  // Basis width: L_pos for spatial kinds, group count for groups.
  Index width = 0;

  bool spatial() const { return kind != TermKind::group; }
};

struct TermParams {
  double tau = 0.0;   // standard deviation of the term's effect
  double alpha = 0.0; // eigenvalue exponent; unused for groups
};

struct VarianceParams {
  std::vector<TermParams> terms;
  double sigma2 = 1.0;
};

/// Diagonal of V(theta_p): (tau/sigma) * lambda_hat^alpha for spatial terms,
/// (tau/sigma) * 1 for groups.
Eigen::VectorXd v_diagonal(const TermSpec &term, const TermParams &params,
                           double sigma2, const Eigen::VectorXd &lambda_hat);

/// Sorted distinct labels of one label column.
class GroupIndex {
public:
  GroupIndex() = default;
  explicit GroupIndex(std::vector<std::string> labels);

  void insert(const std::string &label) { pending_.push_back(label); }
  // Merges pending labels; call once the first data pass is done.
  void finalize();

  Index size() const { return static_cast<Index>(labels_.size()); }
  const std::vector<std::string> &labels() const { return labels_; }
  // Throws unknown_group for an unseen label.
  Index at(const std::string &label) const;
  // -1 for an unseen label.
  Index find(const std::string &label) const;

private:
  std::vector<std::string> labels_;
  std::vector<std::string> pending_;
  std::unordered_map<std::string, Index> lookup_;
};

/// Rows of fitted data fed through the streaming passes.
struct DataBlock {
  Coords coords;
  Eigen::VectorXd y;                             // empty at prediction time
  Eigen::MatrixXd covariates;                    // n x C
  std::vector<std::vector<std::string>> labels;  // one vector per label column
  // Zero-based position of the first row in the full dataset.
  std::size_t first_row = 0;

  Index rows() const { return coords.rows(); }
};

/// Basis block A_p for one term and one data block. Group terms are kept as
/// column indices (one per row) rather than a dense 0/1 matrix.
class TermBlock {
public:
  TermBlock() = default;
  static TermBlock dense(RowMatrix values);
  static TermBlock indicator(std::vector<Index> columns, Index width);

  bool is_indicator() const { return indicator_; }
  Index rows() const {
    return indicator_ ? static_cast<Index>(columns_.size()) : values_.rows();
  }
  Index width() const { return width_; }
  const RowMatrix &values() const { return values_; }
  RowMatrix &values() { return values_; }
  const std::vector<Index> &columns() const { return columns_; }

  Eigen::MatrixXd to_dense() const;

private:
  bool indicator_ = false;
  Index width_ = 0;
  RowMatrix values_;
  std::vector<Index> columns_;
  BasisAllocation tracked_;
};

/// A_p for one term. `basis` may carry a precomputed Nystrom block for the
/// same coordinates; otherwise it is evaluated here.
TermBlock build_term_block(const TermSpec &term, const BasisFactory &factory,
                           const DataBlock &block, const GroupIndex *groups,
                           const RowMatrix *basis = nullptr);

/// All term blocks for a data block, evaluating the Nystrom rows once.
/// `groups[p]` is consulted for group terms only.
std::vector<TermBlock>
build_term_blocks(const std::vector<TermSpec> &terms,
                  const BasisFactory &factory, const DataBlock &block,
                  const std::vector<GroupIndex> &groups);

} // namespace mesa
