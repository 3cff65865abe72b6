#pragma once

#include <string>
#include <vector>

#include "mesa/reml.hpp"

namespace mesa {

/// Everything needed to evaluate effects and predictions without the
/// training data.
struct FittedModel {
  ModelSpec spec;
  BasisFactory factory;
  // Indexed like spec.terms; only group terms carry labels.
  std::vector<GroupIndex> groups;
  FitResult fit;
  std::string response_name;
  std::string x_name = "x";
  std::string y_name = "y";
};

/// Basis rows at new sites. Shares its code path with nystrom_block.
RowMatrix nystrom_extend(const BasisFactory &factory, const Coords &coords);

/// Per-row effect value and standard error for one term.
///
/// SVC terms report the coefficient surface b_k + e(s) V u_p, residual terms
/// e(s) V u_p, group terms the estimated effect of the row's group.
struct EffectSurface {
  Eigen::VectorXd value;
  Eigen::VectorXd se;
};

EffectSurface recover_effects(const FittedModel &model, Index term,
                              const DataBlock &block);

/// Same for a term given a precomputed basis block for the block's sites.
EffectSurface recover_effects(const FittedModel &model, Index term,
                              const DataBlock &block, const RowMatrix &basis);

struct Prediction {
  Eigen::VectorXd fitted;   // X b + sum of term contributions
  Eigen::VectorXd fixed;    // X b
  Eigen::MatrixXd effects;  // n x P, EffectSurface::value per term
  Eigen::MatrixXd se;       // n x P
  // Row saw a group label that was not present in training; that term adds 0.
  std::vector<bool> unseen_group;
};

/// Fitted values and per-term decomposition for one block (training rows or
/// new sites). Labels for group terms are optional: missing label columns
/// count as unseen groups.
Prediction predict_response(const FittedModel &model, const DataBlock &block);

/// Versioned JSON model file.
inline constexpr int kModelFormatVersion = 1;
void save_model(const std::string &path, const FittedModel &model);
FittedModel load_model(const std::string &path);

} // namespace mesa
