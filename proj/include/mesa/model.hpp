#pragma once

#include <string>
#include <vector>

#include "mesa/terms.hpp"

namespace mesa {

/// Fixed-effect design plus additive terms.
struct ModelSpec {
  bool intercept = true;
  std::vector<std::string> covariate_names; // columns of DataBlock::covariates
  std::vector<std::string> label_names;     // columns of DataBlock::labels
  // Covariate columns entering X (after the intercept). Every SVC covariate
  // must appear here so b_p 1 + w_p is represented.
  std::vector<Index> fixed;
  std::vector<TermSpec> terms;

  Index fixed_count() const {
    return static_cast<Index>(fixed.size()) + (intercept ? 1 : 0);
  }
  std::vector<std::string> fixed_names() const;

  /// X column holding the constant part of an SVC term; -1 for other kinds.
  Index fixed_column(const TermSpec &term) const;

  Eigen::MatrixXd design(const DataBlock &block) const;

  /// Throws invalid_parameter when the declaration is inconsistent.
  void validate() const;
};

} // namespace mesa
