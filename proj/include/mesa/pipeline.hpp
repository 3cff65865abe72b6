#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mesa/predict.hpp"
#include "mesa/source.hpp"

namespace mesa {

/// Settings of one fit run.
struct RunConfig {
  std::string input;
  std::string output_dir;
  char delimiter = ',';
  std::string x_column = "x";
  std::string y_column = "y";
  std::string response;
  // Covariates with a spatially varying coefficient (also fixed columns).
  std::vector<std::string> svc;
  // Covariates entering X only.
  std::vector<std::string> fixed_only;
  // One group random-effect term per label column.
  std::vector<std::string> groups;
  bool residual = true;
  bool intercept = true;
  Index knots = 200;
  int max_pairs = kDefaultMaxEigenpairs;
  std::size_t block_rows = 10000;
  int workers = 1;
  std::uint64_t seed = 1;
  std::size_t reservoir = 100000;
  ScalingMode scaling = ScalingMode::as_printed;
  RemlControls controls;

  ColumnBinding binding() const;
  /// Throws invalid_parameter for inconsistent settings.
  void validate() const;
};

struct StageTimes {
  double scan = 0.0;       // pass 1
  double basis = 0.0;      // knots, range, eigenpairs
  double accumulate = 0.0; // pass 2
  double estimate = 0.0;   // REML
  double recover = 0.0;    // pass 3
};

struct FitReport {
  FittedModel model;
  InnerProductStore store;
  std::size_t rows = 0;
  std::size_t blocks = 0;
  StageTimes times;
  BasisMemoryStats memory;
  // Largest basis allocation allowed by the block contract.
  std::size_t memory_bound = 0;
  double mc_scale = 0.0;
  std::vector<double> expected_mc; // per term, NaN for groups
};

/// Pass 1 + basis + pass 2 + estimation. No files are written.
FitReport fit_source(const RunConfig &config, BlockSource &source);

/// Per-block consumer of recovered effects.
using EffectSink = std::function<void(const DataBlock &, const Prediction &)>;

/// Pass 3: recomputes basis rows block by block and hands the fitted values
/// and per-term effects to `sink`.
void recover_pass(const FittedModel &model, BlockSource &source,
                  std::size_t block_rows, const EffectSink &sink);

/// Full fit run: reads config.input, writes model.json, effects.csv and
/// summary.json into config.output_dir. Returns the report.
FitReport run_fit(const RunConfig &config);

/// Writes predictions for `input` (header-bound like the training data) to
/// `output`. Returns the number of rows predicted.
std::size_t run_predict(const std::string &model_path, const std::string &input,
                        const std::string &output, std::size_t block_rows = 10000,
                        char delimiter = ',');

/// Human-readable description of a model file.
void inspect_model(const std::string &model_path, std::ostream &out);

/// Header of the effects / prediction table for a model.
std::vector<std::string> effect_columns(const FittedModel &model, bool with_response);

/// Structured run summary (JSON text).
std::string summary_json(const RunConfig &config, const FitReport &report);

} // namespace mesa
