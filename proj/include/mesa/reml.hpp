#pragma once

#include <vector>

#include "mesa/accumulate.hpp"
#include "mesa/model.hpp"

namespace mesa {

/// Cholesky factor with diagonal jitter escalation
/// (1e-10 .. 1e-6 times trace/order). Throws singular_system when even the
/// largest jitter fails.
struct CholeskyFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  double log_det() const;
};

CholeskyFactor factorize(const Eigen::MatrixXd &m);

/// The compressed normal-equation system at one parameter value: R(Theta) and
/// the right-hand side (X'y; V_1 A_1'y; ...).
struct AssembledSystem {
  Eigen::MatrixXd r;
  Eigen::VectorXd rhs;
  std::vector<Index> offsets;        // start of each term's block in r
  std::vector<Eigen::VectorXd> v;    // diagonal of V(theta_p) per term
  VarianceParams params;
};

/// The parts of a fit that are fixed while variance parameters move.
struct RemlProblem {
  const InnerProductStore *store = nullptr;
  std::vector<TermSpec> terms;
  Eigen::VectorXd lambda_hat;

  Index fixed_count() const { return store->fixed_count(); }
  double residual_df() const {
    return static_cast<double>(store->n_seen) - static_cast<double>(fixed_count());
  }
};

AssembledSystem assemble_R(const RemlProblem &problem,
                           const VarianceParams &params);

struct Coefficients {
  Eigen::VectorXd b;
  std::vector<Eigen::VectorXd> u;
  Eigen::VectorXd stacked;
};

Coefficients solve_coefficients(const AssembledSystem &system,
                                const CholeskyFactor &factor);
Coefficients solve_coefficients(const AssembledSystem &system);

/// y'y - 2 c'rhs + c'P0 c + sum ||u_p||^2, with P0 = R - blockdiag(0, I).
double compute_d(const RemlProblem &problem, const AssembledSystem &system,
                 const Coefficients &coef);

/// Restricted log-likelihood with sigma^2 profiled out, assembled from scratch.
double restricted_loglik(const RemlProblem &problem,
                         const VarianceParams &params);

/// Same quantity from ln|R| and d directly.
double restricted_loglik_value(double log_det_r, double d, double residual_df);

/// Search box and tolerances for the variance parameters. Coordinates are
/// (log(tau_p^2 / sigma^2), alpha_p); group terms use the first only.
struct RemlControls {
  double log_tau2_min = -20.0;
  double log_tau2_max = 20.0;
  double alpha_min = -10.0;
  double alpha_max = 10.0;
  double optimizer_tolerance = 1e-6;
  int max_evaluations = 400;
  double outer_tolerance = 1e-5;
  int max_sweeps = 20;
  // Re-evaluate each term update through full assembly and record it in the
  // ascent monitor.
  bool verify_ascent = false;
  // Evaluate probes through full assembly instead of the cached complement.
  bool full_refactorization = false;
  // log(tau^2/sigma^2) of the first-sweep restart points (alpha 0 and 1).
  double restart_log_ratio = -0.69314718055994531; // log(1/2)
};

/// Likelihood of term p's parameters with every other term held fixed. The
/// complement of term p is factored once; each probe then costs O(L_p^3).
class TermProfile {
public:
  TermProfile(const RemlProblem &problem, const VarianceParams &params, Index p);

  /// Restricted log-likelihood at `candidate` for term p (sigma2 = 1 units).
  double loglik(const TermParams &candidate) const;

private:
  const RemlProblem &problem_;
  Index p_;
  double log_det_complement_ = 0.0;
  double quad_complement_ = 0.0;
  Eigen::MatrixXd q_;       // M_pp - C' A^{-1} C
  Eigen::VectorXd shifted_; // m_p - C' A^{-1} r_A
};

/// One coordinate-ascent step on term p. `params` is in sigma2 = 1 units.
/// With `restart`, additional Nelder-Mead runs start from the configured
/// restart points. Never returns a point worse than the current one.
/// `loglik_out` receives the restricted log-likelihood at the returned point.
/// `loglik_before`, when given, is the caller's value at `params`; the ascent
/// monitor compares against it.
TermParams optimize_term(const RemlProblem &problem, const VarianceParams &params,
                         Index p, const RemlControls &controls,
                         bool restart = false, double *loglik_out = nullptr,
                         const double *loglik_before = nullptr);

/// Worst loglik decrease observed across optimize_term calls in this process.
struct AscentRecord {
  std::size_t calls = 0;
  double worst_decrease = 0.0;
};
AscentRecord ascent_record();
void reset_ascent_record();

struct FitResult {
  Eigen::VectorXd b;
  std::vector<Eigen::VectorXd> u;
  VarianceParams theta;   // tau_p in response units, sigma2 = sigma2_hat
  double sigma2 = 0.0;
  double loglik = 0.0;
  double d = 0.0;
  int sweeps = 0;
  bool converged = true;
  std::vector<double> trace;   // loglik after each sweep, starting value first
  std::vector<bool> dropped;
  std::size_t n = 0;
  // sigma2 R^{-1} restricted to b.
  Eigen::MatrixXd fixed_covariance;
  // Per term: sigma2 R^{-1} over (b_k, u_p) for SVC terms, over u_p for the
  // residual spatial term, and only the diagonal (as a column) for groups.
  std::vector<Eigen::MatrixXd> se_blocks;
  double fit_seconds = 0.0;

  Index fixed_count() const { return b.size(); }
};

/// sigma2-scaled covariance subsets of R^{-1} needed for effect SEs.
struct StandardErrors {
  Eigen::MatrixXd fixed_covariance;
  std::vector<Eigen::MatrixXd> blocks;
};

StandardErrors standard_errors(const ModelSpec &spec,
                               const AssembledSystem &system,
                               const CholeskyFactor &factor, double sigma2);

/// Term-wise coordinate ascent, then coefficients, sigma2 and SEs.
/// `initial` (sigma2 = 1 units) overrides the default start when nonempty.
FitResult fit(const ModelSpec &spec, const InnerProductStore &store,
              const Eigen::VectorXd &lambda_hat, const RemlControls &controls = {},
              const VarianceParams *initial = nullptr);

/// Turns estimated log-ratio / alpha into VarianceParams in sigma2 = 1 units.
TermParams term_params_from_search(const TermSpec &term, const Eigen::VectorXd &x);
Eigen::VectorXd search_from_term_params(const TermSpec &term, const TermParams &p);

} // namespace mesa
