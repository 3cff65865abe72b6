#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "mesa/pipeline.hpp"

namespace mesa {

struct SimConfig {
  std::size_t n = 1000;
  double s_x = 0.5;          // share of spatial variation in the covariates
  double tau_g2_ratio = 0.0; // tau_g^2 / tau^2
  double tau2 = 1.0;
  int n_svc_large = 3;
  int n_svc_small = 3;
  std::size_t group_size = 20;
  std::uint64_t seed = 1;
  Index knots = 0; // 0: min(200, n / 2)
  ScalingMode scaling = ScalingMode::as_printed;

  int svc_count() const { return n_svc_large + n_svc_small; }
  Index knot_count() const;
  void validate() const;
};

struct SimDataset {
  Coords coords;
  Eigen::MatrixXd x;            // n x svc_count
  Eigen::VectorXd y;
  Eigen::VectorXd w0;           // residual spatial process
  Eigen::MatrixXd beta;         // n x svc_count, true coefficient surfaces 1 + w_p
  Eigen::VectorXd g;            // group effect per row
  std::vector<std::string> labels;
  std::vector<Index> group_of;  // group index per row
  double sigma = 0.0;
  double signal_sd = 0.0;
  BasisFactory factory;

  /// Covariates x1.., labels "group", response "y".
  DataBlock table() const;
};

struct SimCovariate {
  Eigen::VectorXd x;
  Eigen::VectorXd spatial; // v_x E gamma_x, sample variance 1
};

/// x = (1 - s_x) eps + s_x v_x E gamma, gamma ~ N(0, Lambda_hat).
SimCovariate generate_covariate(const BasisFactory &factory, const RowMatrix &basis,
                                double s_x, std::mt19937_64 &rng);
SimCovariate generate_covariate(const BasisFactory &factory, const Coords &coords,
                                double s_x, std::uint64_t seed);

SimDataset generate_dataset(const SimConfig &config);

/// sqrt of the mean squared deviation over all replicates and rows.
double rmse(const std::vector<Eigen::VectorXd> &estimates,
            const std::vector<Eigen::VectorXd> &truths);
double rmse(const Eigen::VectorXd &estimate, const Eigen::VectorXd &truth);

/// One fitted model on one replicate.
struct ModelOutcome {
  bool ok = false;
  std::string error;
  Eigen::VectorXd svc_rmse;  // per SVC coefficient surface
  double residual_rmse = 0.0;
  double group_rmse = 0.0;   // group effect (0 estimate for the no-group model)
  Eigen::VectorXd alpha;     // per SVC term
  double residual_alpha = 0.0;
  double seconds = 0.0;
  int sweeps = 0;
  bool converged = false;
};

struct ReplicateOutcome {
  std::uint64_t seed = 0;
  ModelOutcome full;     // with the group term
  ModelOutcome no_group; // same model without it
};

struct CellResult {
  SimConfig config;
  std::vector<ReplicateOutcome> replicates;
};

struct ExperimentOptions {
  int replicates = 50;
  int workers = 1;
  RemlControls controls;
};

/// Replicate r of a cell uses the seed derived from (cell seed, r).
std::uint64_t replicate_seed(std::uint64_t cell_seed, int replicate);

std::vector<CellResult> run_experiment(const std::vector<SimConfig> &cells,
                                       const ExperimentOptions &options);

/// One row per cell and term, both models side by side: RMSE, median alpha,
/// failures and optionally mean fit seconds (which break byte-reproducibility).
void write_summary(std::ostream &out, const std::vector<CellResult> &cells,
                   bool timings = false);

/// Fits one model to a simulated dataset through the regular fit pipeline.
ModelOutcome fit_replicate(const SimDataset &data, const SimConfig &config,
                           bool with_group, const RemlControls &controls);

} // namespace mesa
