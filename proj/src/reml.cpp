#include "mesa/reml.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "mesa/error.hpp"
#include "mesa/nelder_mead.hpp"

namespace mesa {

double CholeskyFactor::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

CholeskyFactor factorize(const Eigen::MatrixXd &m) {
  CholeskyFactor f;
  f.llt.compute(m);
  if (f.llt.info() == Eigen::Success) {
    return f;
  }
  const double order = static_cast<double>(std::max<Index>(m.rows(), 1));
  const double scale = std::abs(m.trace()) / order;
  for (double level = 1e-10; level <= 1e-6 * 1.0001; level *= 10.0) {
    f.jitter = level * scale;
    Eigen::MatrixXd shifted = m;
    shifted.diagonal().array() += f.jitter;
    f.llt.compute(shifted);
    if (f.llt.info() == Eigen::Success) {
      return f;
    }
  }
  const Eigen::VectorXd diag = m.diagonal();
  std::ostringstream msg;
  msg << "Cholesky failed after jitter " << f.jitter << " on a matrix of order "
      << m.rows() << " (diagonal range " << diag.minCoeff() << " .. "
      << diag.maxCoeff() << ", rcond ~ " << f.llt.rcond() << ")";
  fail(ErrorCode::singular_system, msg.str());
}

namespace {

Eigen::MatrixXd cross_block(const InnerProductStore &s, Index p, Index q) {
  return p <= q ? s.cross(p, q) : Eigen::MatrixXd(s.cross(q, p).transpose());
}

std::vector<Eigen::VectorXd> v_all(const RemlProblem &problem,
                                   const VarianceParams &params) {
  require(params.terms.size() == problem.terms.size(), ErrorCode::invalid_input,
          "variance parameter count does not match term count");
  std::vector<Eigen::VectorXd> v;
  v.reserve(problem.terms.size());
  for (std::size_t p = 0; p < problem.terms.size(); ++p) {
    v.push_back(v_diagonal(problem.terms[p], params.terms[p], params.sigma2,
                           problem.lambda_hat));
  }
  return v;
}

} // namespace

namespace {

// R(Theta) and rhs with term `exclude` left out (-1 keeps every term). The
// excluded term gets offset -1; v still covers all terms.
AssembledSystem assemble_excluding(const RemlProblem &problem,
                                   const VarianceParams &params, Index exclude) {
  const InnerProductStore &s = *problem.store;
  const Index k = s.fixed_count();
  const Index np = s.term_count();
  require(static_cast<Index>(problem.terms.size()) == np,
          ErrorCode::invalid_input, "term count does not match the store");

  AssembledSystem sys;
  sys.params = params;
  sys.v = v_all(problem, params);
  sys.offsets.resize(np);
  Index off = k;
  for (Index p = 0; p < np; ++p) {
    require(problem.terms[p].width == s.width(p), ErrorCode::invalid_input,
            "term '" + problem.terms[p].name + "' width does not match the store");
    if (p == exclude) {
      sys.offsets[p] = -1;
      continue;
    }
    sys.offsets[p] = off;
    off += s.width(p);
  }
  const Index order = off;
  sys.r.resize(order, order);
  sys.rhs.resize(order);

  sys.r.topLeftCorner(k, k) = s.xx;
  sys.rhs.head(k) = s.xy;
  for (Index p = 0; p < np; ++p) {
    if (p == exclude) {
      continue;
    }
    const Index op = sys.offsets[p];
    const Index lp = s.width(p);
    const auto &vp = sys.v[p];
    sys.r.block(0, op, k, lp) = s.xa[p] * vp.asDiagonal();
    sys.r.block(op, 0, lp, k) = sys.r.block(0, op, k, lp).transpose();
    sys.rhs.segment(op, lp) = vp.cwiseProduct(s.ay[p]);
    for (Index q = p; q < np; ++q) {
      if (q == exclude) {
        continue;
      }
      const Index oq = sys.offsets[q];
      const Index lq = s.width(q);
      sys.r.block(op, oq, lp, lq) =
          vp.asDiagonal() * s.cross(p, q) * sys.v[q].asDiagonal();
      if (q == p) {
        sys.r.block(op, op, lp, lp).diagonal().array() += 1.0;
      } else {
        sys.r.block(oq, op, lq, lp) = sys.r.block(op, oq, lp, lq).transpose();
      }
    }
  }
  require(sys.r.allFinite(), ErrorCode::parameter_out_of_range,
          "R(Theta) has non-finite entries");
  return sys;
}

} // namespace

AssembledSystem assemble_R(const RemlProblem &problem,
                           const VarianceParams &params) {
  return assemble_excluding(problem, params, -1);
}

Coefficients solve_coefficients(const AssembledSystem &system,
                                const CholeskyFactor &factor) {
  Coefficients c;
  c.stacked = factor.llt.solve(system.rhs);
  const Index k = system.offsets.empty() ? system.rhs.size() : system.offsets[0];
  c.b = c.stacked.head(k);
  for (std::size_t p = 0; p < system.offsets.size(); ++p) {
    c.u.push_back(c.stacked.segment(system.offsets[p], system.v[p].size()));
  }
  return c;
}

Coefficients solve_coefficients(const AssembledSystem &system) {
  return solve_coefficients(system, factorize(system.r));
}

double compute_d(const RemlProblem &problem, const AssembledSystem &system,
                 const Coefficients &coef) {
  const double yy = problem.store->yy;
  double penalty = 0.0;
  for (const auto &u : coef.u) {
    penalty += u.squaredNorm();
  }
  // c'P0 c = c'R c - sum ||u_p||^2
  const double gram = coef.stacked.dot(system.r * coef.stacked) - penalty;
  const double d = yy - 2.0 * coef.stacked.dot(system.rhs) + gram + penalty;
  require(d >= -1e-8 * yy, ErrorCode::numerical_inconsistency,
          "d(Theta) = " + std::to_string(d) + " is negative beyond rounding");
  // The expansion cancels terms of size y'y; anything below this floor is
  // rounding noise around an exact fit.
  return d <= 1e-12 * yy ? 0.0 : d;
}

double restricted_loglik_value(double log_det_r, double d, double residual_df) {
  require(residual_df > 0.0, ErrorCode::invalid_input,
          "restricted likelihood needs N > K");
  require(d > 0.0, ErrorCode::degenerate_likelihood,
          "d(Theta) = 0: the model fits the data exactly");
  return -0.5 * log_det_r -
         0.5 * residual_df *
             (1.0 + std::log(2.0 * std::numbers::pi * d / residual_df));
}

double restricted_loglik(const RemlProblem &problem,
                         const VarianceParams &params) {
  const AssembledSystem sys = assemble_R(problem, params);
  const CholeskyFactor f = factorize(sys.r);
  const Coefficients c = solve_coefficients(sys, f);
  const double d = compute_d(problem, sys, c);
  return restricted_loglik_value(f.log_det(), d, problem.residual_df());
}

TermProfile::TermProfile(const RemlProblem &problem, const VarianceParams &params,
                         Index p)
    : problem_(problem), p_(p) {
  const InnerProductStore &s = *problem.store;
  require(p >= 0 && p < s.term_count(), ErrorCode::unknown_term,
          "term index " + std::to_string(p));
  const AssembledSystem sys = assemble_excluding(problem, params, p);
  const Index k = s.fixed_count();
  const Index lp = s.width(p);

  // Unscaled cross block between the complement and term p.
  Eigen::MatrixXd c(sys.r.rows(), lp);
  c.topRows(k) = s.xa[p];
  for (Index q = 0; q < s.term_count(); ++q) {
    if (q != p) {
      c.middleRows(sys.offsets[q], s.width(q)) =
          sys.v[q].asDiagonal() * cross_block(s, q, p);
    }
  }

  // With A = L L': Q = M_pp - B'B and shifted = m_p - B'z for B = L^{-1}C,
  // z = L^{-1} r_A; r_A' A^{-1} r_A = z'z.
  const CholeskyFactor fa = factorize(sys.r);
  log_det_complement_ = fa.log_det();
  const auto lower = fa.llt.matrixL();
  lower.solveInPlace(c);
  Eigen::VectorXd z = sys.rhs;
  lower.solveInPlace(z);
  quad_complement_ = z.squaredNorm();
  q_ = s.cross(p, p);
  q_.selfadjointView<Eigen::Lower>().rankUpdate(c.transpose(), -1.0);
  Eigen::MatrixXd full = q_.selfadjointView<Eigen::Lower>();
  q_ = std::move(full);
  shifted_ = s.ay[p] - c.transpose() * z;
}

double TermProfile::loglik(const TermParams &candidate) const {
  const TermSpec &term = problem_.terms[p_];
  Eigen::VectorXd v;
  try {
    v = v_diagonal(term, candidate, 1.0, problem_.lambda_hat);
  } catch (const Error &) {
    return -std::numeric_limits<double>::infinity();
  }
  Eigen::MatrixXd schur = v.asDiagonal() * q_ * v.asDiagonal();
  schur.diagonal().array() += 1.0;
  if (!schur.allFinite()) {
    return -std::numeric_limits<double>::infinity();
  }
  try {
    const CholeskyFactor fs = factorize(schur);
    const Eigen::VectorXd z = v.cwiseProduct(shifted_);
    const double quad = quad_complement_ + z.dot(fs.llt.solve(z));
    const double yy = problem_.store->yy;
    double d = yy - quad;
    if (d < -1e-8 * yy || !std::isfinite(d)) {
      return -std::numeric_limits<double>::infinity();
    }
    if (d <= 0.0) {
      return -std::numeric_limits<double>::infinity();
    }
    return restricted_loglik_value(log_det_complement_ + fs.log_det(), d,
                                   problem_.residual_df());
  } catch (const Error &) {
    return -std::numeric_limits<double>::infinity();
  }
}

TermParams term_params_from_search(const TermSpec &term, const Eigen::VectorXd &x) {
  TermParams out;
  out.tau = std::exp(0.5 * x(0));
  out.alpha = term.spatial() ? x(1) : 0.0;
  return out;
}

Eigen::VectorXd search_from_term_params(const TermSpec &term, const TermParams &p) {
  Eigen::VectorXd x(term.spatial() ? 2 : 1);
  x(0) = p.tau > 0.0 ? 2.0 * std::log(p.tau) : -std::numeric_limits<double>::infinity();
  if (term.spatial()) {
    x(1) = p.alpha;
  }
  return x;
}

namespace {

std::mutex g_ascent_mutex;
AscentRecord g_ascent;

void record_ascent(double before, double after) {
  std::lock_guard<std::mutex> lock(g_ascent_mutex);
  ++g_ascent.calls;
  if (std::isfinite(before) && std::isfinite(after)) {
    g_ascent.worst_decrease = std::max(g_ascent.worst_decrease, before - after);
  }
}

} // namespace

AscentRecord ascent_record() {
  std::lock_guard<std::mutex> lock(g_ascent_mutex);
  return g_ascent;
}

void reset_ascent_record() {
  std::lock_guard<std::mutex> lock(g_ascent_mutex);
  g_ascent = {};
}

TermParams optimize_term(const RemlProblem &problem, const VarianceParams &params,
                         Index p, const RemlControls &controls, bool restart,
                         double *loglik_out, const double *loglik_before) {
  require(p >= 0 && p < static_cast<Index>(problem.terms.size()),
          ErrorCode::unknown_term, "term index " + std::to_string(p));
  const TermSpec &term = problem.terms[p];
  const Index dim = term.spatial() ? 2 : 1;
  Eigen::VectorXd lower(dim), upper(dim), step(dim);
  lower(0) = controls.log_tau2_min;
  upper(0) = controls.log_tau2_max;
  step(0) = 1.0;
  if (term.spatial()) {
    lower(1) = controls.alpha_min;
    upper(1) = controls.alpha_max;
    step(1) = 0.5;
  }

  std::vector<std::pair<Eigen::VectorXd, double>> probes;
  std::function<double(const TermParams &)> loglik;
  std::unique_ptr<TermProfile> profile;
  if (controls.full_refactorization) {
    loglik = [&](const TermParams &candidate) {
      VarianceParams trial = params;
      trial.terms[p] = candidate;
      try {
        return restricted_loglik(problem, trial);
      } catch (const Error &) {
        return -std::numeric_limits<double>::infinity();
      }
    };
  } else {
    profile = std::make_unique<TermProfile>(problem, params, p);
    loglik = [&](const TermParams &candidate) { return profile->loglik(candidate); };
  }
  auto objective = [&](const Eigen::VectorXd &x) {
    const double ll = loglik(term_params_from_search(term, x));
    if (probes.size() < 16) {
      probes.emplace_back(x, ll);
    }
    return -ll;
  };

  const Eigen::VectorXd current =
      search_from_term_params(term, params.terms[p]).cwiseMax(lower).cwiseMin(upper);
  const double current_value = objective(current);

  std::vector<Eigen::VectorXd> starts{current};
  if (restart) {
    Eigen::VectorXd s(dim);
    s(0) = controls.restart_log_ratio;
    if (term.spatial()) {
      s(1) = 0.0;
      starts.push_back(s);
      s(1) = 1.0;
      starts.push_back(s);
    } else {
      starts.push_back(s);
    }
  }

  NelderMeadOptions nm;
  nm.f_tolerance = controls.optimizer_tolerance;
  nm.max_evaluations = controls.max_evaluations;
  Eigen::VectorXd best_x = current;
  double best_value = current_value;
  for (const auto &start : starts) {
    const NelderMeadResult r = nelder_mead(objective, start, step, lower, upper, nm);
    if (r.value < best_value) {
      best_value = r.value;
      best_x = r.x;
    }
  }
  if (!std::isfinite(best_value)) {
    std::ostringstream msg;
    msg << "term '" << term.name << "': no finite likelihood at any probe;";
    for (const auto &[x, v] : probes) {
      msg << " (" << x.transpose() << ") -> " << v << ";";
    }
    fail(ErrorCode::optimization_failure, msg.str());
  }

  // Keeping the current point when nothing improved preserves its exact
  // parameters (the box projection may otherwise move an out-of-box start).
  const bool improved = best_value < current_value;
  TermParams result = improved ? term_params_from_search(term, best_x) : params.terms[p];
  double after = -std::min(best_value, current_value);
  if (!improved && search_from_term_params(term, params.terms[p]) != current) {
    // The kept point lies outside the box, so the probe value is not its own.
    after = restricted_loglik(problem, params);
  }
  if (controls.verify_ascent) {
    VarianceParams updated = params;
    updated.terms[p] = result;
    after = restricted_loglik(problem, updated);
    record_ascent(restricted_loglik(problem, params), after);
  } else {
    // A caller-supplied value for the starting point comes from a different
    // factorization, which makes the check more than a tautology.
    record_ascent(loglik_before != nullptr ? *loglik_before : -current_value, after);
  }
  if (loglik_out != nullptr) {
    *loglik_out = after;
  }
  return result;
}

StandardErrors standard_errors(const ModelSpec &spec,
                               const AssembledSystem &system,
                               const CholeskyFactor &factor, double sigma2) {
  const Index order = system.r.rows();
  const Eigen::MatrixXd rinv =
      factor.llt.solve(Eigen::MatrixXd::Identity(order, order));
  require(rinv.allFinite(), ErrorCode::singular_system,
          "R(Theta) inverse is not finite");
  StandardErrors out;
  const Index k = system.offsets.empty() ? order : system.offsets[0];
  out.fixed_covariance = sigma2 * rinv.topLeftCorner(k, k);
  for (std::size_t p = 0; p < spec.terms.size(); ++p) {
    const TermSpec &term = spec.terms[p];
    const Index off = system.offsets[p];
    const Index lp = system.v[p].size();
    if (term.kind == TermKind::group) {
      out.blocks.push_back(sigma2 * rinv.block(off, off, lp, lp).diagonal());
      continue;
    }
    std::vector<Index> idx;
    const Index fixed = spec.fixed_column(term);
    if (fixed >= 0) {
      idx.push_back(fixed);
    }
    for (Index i = 0; i < lp; ++i) {
      idx.push_back(off + i);
    }
    out.blocks.push_back(sigma2 * rinv(idx, idx));
  }
  return out;
}

FitResult fit(const ModelSpec &spec, const InnerProductStore &store,
              const Eigen::VectorXd &lambda_hat, const RemlControls &controls,
              const VarianceParams *initial) {
  const auto started = std::chrono::steady_clock::now();
  spec.validate();
  require(spec.fixed_count() == store.fixed_count(), ErrorCode::invalid_input,
          "model fixed-effect count does not match the store");
  require(store.n_seen > static_cast<std::size_t>(store.fixed_count()),
          ErrorCode::invalid_input, "fit needs more rows than fixed effects");

  RemlProblem problem{&store, spec.terms, lambda_hat};
  const auto np = static_cast<Index>(spec.terms.size());

  VarianceParams params;
  params.sigma2 = 1.0;
  if (initial != nullptr && !initial->terms.empty()) {
    require(static_cast<Index>(initial->terms.size()) == np,
            ErrorCode::invalid_parameter, "initial parameter count mismatch");
    params.terms = initial->terms;
  } else {
    // tau_p^2 = sigma2_OLS / (2P), alpha_p = 0
    const double tau = np > 0 ? std::sqrt(1.0 / (2.0 * static_cast<double>(np))) : 0.0;
    params.terms.assign(np, TermParams{tau, 0.0});
  }

  FitResult out;
  out.n = store.n_seen;
  if (np > 0) {
    double previous = restricted_loglik(problem, params);
    out.trace.push_back(previous);
    out.converged = false;
    for (int sweep = 1; sweep <= controls.max_sweeps; ++sweep) {
      double current = previous;
      for (Index p = 0; p < np; ++p) {
        const double before = current;
        params.terms[p] =
            optimize_term(problem, params, p, controls, sweep == 1, &current, &before);
      }
      out.trace.push_back(current);
      out.sweeps = sweep;
      if (current - previous < controls.outer_tolerance) {
        out.converged = true;
        break;
      }
      previous = current;
    }
  }

  const AssembledSystem sys = assemble_R(problem, params);
  const CholeskyFactor factor = factorize(sys.r);
  const Coefficients coef = solve_coefficients(sys, factor);
  out.d = compute_d(problem, sys, coef);
  out.sigma2 = out.d / problem.residual_df();
  out.loglik = restricted_loglik_value(factor.log_det(), out.d, problem.residual_df());
  out.b = coef.b;
  out.u = coef.u;

  StandardErrors se = standard_errors(spec, sys, factor, out.sigma2);
  out.fixed_covariance = std::move(se.fixed_covariance);
  out.se_blocks = std::move(se.blocks);

  out.theta.sigma2 = out.sigma2;
  out.theta.terms = params.terms;
  const double sigma = std::sqrt(out.sigma2);
  for (auto &t : out.theta.terms) {
    out.dropped.push_back(t.tau * t.tau < 1e-12);
    t.tau *= sigma;
  }
  out.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

} // namespace mesa
