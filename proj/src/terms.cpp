#include "mesa/terms.hpp"

#include <algorithm>
#include <cmath>

#include "mesa/error.hpp"

namespace mesa {

const char *to_string(TermKind kind) {
  switch (kind) {
  case TermKind::residual_spatial:
    return "residual_spatial";
  case TermKind::svc:
    return "svc";
  case TermKind::group:
    return "group";
  }
  return "unknown";
}

Eigen::VectorXd v_diagonal(const TermSpec &term, const TermParams &params,
                           double sigma2, const Eigen::VectorXd &lambda_hat) {
  require(sigma2 > 0.0 && std::isfinite(sigma2), ErrorCode::invalid_parameter,
          "sigma2 must be positive");
  require(params.tau >= 0.0 && std::isfinite(params.tau),
          ErrorCode::invalid_parameter, "tau must be nonnegative");
  const double ratio = params.tau / std::sqrt(sigma2);
  if (term.kind == TermKind::group) {
    return Eigen::VectorXd::Constant(term.width, ratio);
  }
  require(lambda_hat.size() == term.width, ErrorCode::invalid_input,
          "eigenvalue count does not match term width for '" + term.name + "'");
  Eigen::VectorXd v(term.width);
  for (Index l = 0; l < term.width; ++l) {
    v(l) = ratio * std::pow(lambda_hat(l), params.alpha);
  }
  require(v.allFinite(), ErrorCode::parameter_out_of_range,
          "lambda^alpha overflows for term '" + term.name +
              "' at alpha = " + std::to_string(params.alpha));
  return v;
}

GroupIndex::GroupIndex(std::vector<std::string> labels)
    : pending_(std::move(labels)) {
  finalize();
}

void GroupIndex::finalize() {
  labels_.insert(labels_.end(), pending_.begin(), pending_.end());
  pending_.clear();
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  lookup_.clear();
  lookup_.reserve(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    lookup_.emplace(labels_[i], static_cast<Index>(i));
  }
}

Index GroupIndex::find(const std::string &label) const {
  const auto it = lookup_.find(label);
  return it == lookup_.end() ? -1 : it->second;
}

Index GroupIndex::at(const std::string &label) const {
  const Index i = find(label);
  require(i >= 0, ErrorCode::unknown_group, "label '" + label + "'");
  return i;
}

TermBlock TermBlock::dense(RowMatrix values) {
  TermBlock b;
  b.width_ = values.cols();
  b.tracked_ = BasisAllocation(static_cast<std::size_t>(values.rows()),
                               static_cast<std::size_t>(values.cols()));
  b.values_ = std::move(values);
  return b;
}

TermBlock TermBlock::indicator(std::vector<Index> columns, Index width) {
  TermBlock b;
  b.indicator_ = true;
  b.width_ = width;
  b.tracked_ = BasisAllocation(columns.size(), 1);
  b.columns_ = std::move(columns);
  return b;
}

Eigen::MatrixXd TermBlock::to_dense() const {
  if (!indicator_) {
    return values_;
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows(), width_);
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    out(static_cast<Index>(i), columns_[i]) = 1.0;
  }
  return out;
}

namespace {

void check_block(const TermSpec &term, const DataBlock &block) {
  const Index n = block.rows();
  if (term.kind == TermKind::svc) {
    require(term.covariate >= 0 && term.covariate < block.covariates.cols(),
            ErrorCode::invalid_input,
            "SVC term '" + term.name + "' refers to a missing covariate");
    require(block.covariates.rows() == n, ErrorCode::invalid_input,
            "covariate rows do not match coordinate rows");
  }
  if (term.kind == TermKind::group) {
    require(term.label_column >= 0 &&
                term.label_column < static_cast<Index>(block.labels.size()),
            ErrorCode::invalid_input,
            "group term '" + term.name + "' refers to a missing label column");
    require(static_cast<Index>(block.labels[term.label_column].size()) == n,
            ErrorCode::invalid_input, "label rows do not match coordinate rows");
  }
}

TermBlock spatial_block(const TermSpec &term, const DataBlock &block,
                        RowMatrix basis) {
  if (term.kind == TermKind::svc) {
    basis.array().colwise() *= block.covariates.col(term.covariate).array();
  }
  return TermBlock::dense(std::move(basis));
}

} // namespace

TermBlock build_term_block(const TermSpec &term, const BasisFactory &factory,
                           const DataBlock &block, const GroupIndex *groups,
                           const RowMatrix *basis) {
  check_block(term, block);
  if (term.kind == TermKind::group) {
    require(groups != nullptr, ErrorCode::invalid_input,
            "group term '" + term.name + "' needs a group index");
    const auto &labels = block.labels[term.label_column];
    std::vector<Index> cols(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      cols[i] = groups->at(labels[i]);
    }
    return TermBlock::indicator(std::move(cols), groups->size());
  }
  if (basis != nullptr) {
    require(basis->rows() == block.rows(), ErrorCode::invalid_input,
            "precomputed basis rows do not match the block");
    return spatial_block(term, block, *basis);
  }
  return spatial_block(term, block, factory.nystrom_block(block.coords));
}

std::vector<TermBlock>
build_term_blocks(const std::vector<TermSpec> &terms,
                  const BasisFactory &factory, const DataBlock &block,
                  const std::vector<GroupIndex> &groups) {
  std::vector<TermBlock> out;
  out.reserve(terms.size());
  const bool any_spatial =
      std::any_of(terms.begin(), terms.end(), [](const TermSpec &t) { return t.spatial(); });
  RowMatrix basis;
  BasisAllocation basis_token;
  if (any_spatial && block.rows() > 0) {
    basis = factory.nystrom_block(block.coords);
    basis_token = BasisAllocation(static_cast<std::size_t>(basis.rows()),
                                  static_cast<std::size_t>(basis.cols()));
  } else if (any_spatial) {
    basis = RowMatrix(0, factory.size());
  }
  std::size_t last_spatial = terms.size();
  for (std::size_t p = 0; p < terms.size(); ++p) {
    last_spatial = terms[p].spatial() ? p : last_spatial;
  }
  for (std::size_t p = 0; p < terms.size(); ++p) {
    const GroupIndex *g = p < groups.size() ? &groups[p] : nullptr;
    if (p == last_spatial) {
      // The last spatial term takes over the shared rows instead of copying.
      check_block(terms[p], block);
      basis_token = BasisAllocation();
      out.push_back(spatial_block(terms[p], block, std::move(basis)));
      continue;
    }
    out.push_back(build_term_block(terms[p], factory, block, g,
                                   terms[p].spatial() ? &basis : nullptr));
  }
  return out;
}

} // namespace mesa
