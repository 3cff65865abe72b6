#include "mesa/model.hpp"

#include <algorithm>
#include <set>

#include "mesa/error.hpp"

namespace mesa {

std::vector<std::string> ModelSpec::fixed_names() const {
  std::vector<std::string> out;
  if (intercept) {
    out.emplace_back("(intercept)");
  }
  for (Index c : fixed) {
    out.push_back(c < static_cast<Index>(covariate_names.size())
                      ? covariate_names[c]
                      : "x" + std::to_string(c));
  }
  return out;
}

Index ModelSpec::fixed_column(const TermSpec &term) const {
  if (term.kind != TermKind::svc) {
    return -1;
  }
  const auto it = std::find(fixed.begin(), fixed.end(), term.covariate);
  if (it == fixed.end()) {
    return -1;
  }
  return static_cast<Index>(it - fixed.begin()) + (intercept ? 1 : 0);
}

Eigen::MatrixXd ModelSpec::design(const DataBlock &block) const {
  const Index n = block.rows();
  Eigen::MatrixXd x(n, fixed_count());
  Index col = 0;
  if (intercept) {
    x.col(col++).setOnes();
  }
  for (Index c : fixed) {
    require(c >= 0 && c < block.covariates.cols(), ErrorCode::invalid_input,
            "fixed covariate column " + std::to_string(c) + " missing");
    x.col(col++) = block.covariates.col(c);
  }
  return x;
}

void ModelSpec::validate() const {
  require(fixed_count() >= 1, ErrorCode::invalid_parameter,
          "the model needs at least one fixed effect");
  std::set<Index> seen(fixed.begin(), fixed.end());
  require(seen.size() == fixed.size(), ErrorCode::invalid_parameter,
          "duplicate fixed covariate");
  std::set<std::string> names;
  for (const TermSpec &t : terms) {
    require(!t.name.empty() && names.insert(t.name).second,
            ErrorCode::invalid_parameter,
            "term names must be unique and nonempty ('" + t.name + "')");
    require(t.width >= 1, ErrorCode::invalid_parameter,
            "term '" + t.name + "' has zero width");
    if (t.kind == TermKind::svc) {
      require(fixed_column(t) >= 0, ErrorCode::invalid_parameter,
              "SVC term '" + t.name + "' covariate is not a fixed column");
    }
    if (t.kind == TermKind::group) {
      require(t.label_column >= 0, ErrorCode::invalid_parameter,
              "group term '" + t.name + "' has no label column");
    }
  }
}

} // namespace mesa
