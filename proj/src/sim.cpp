#include "mesa/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "mesa/error.hpp"

namespace mesa {

Index SimConfig::knot_count() const {
  return knots > 0 ? knots : std::min<Index>(200, static_cast<Index>(n / 2));
}

void SimConfig::validate() const {
  require(s_x >= 0.0 && s_x < 1.0, ErrorCode::invalid_parameter,
          "s_x must lie in [0, 1)");
  require(std::isfinite(tau2) && tau2 > 0.0, ErrorCode::invalid_parameter,
          "tau2 must be positive");
  require(std::isfinite(tau_g2_ratio) && tau_g2_ratio >= 0.0,
          ErrorCode::invalid_parameter, "tau_g2_ratio must be >= 0");
  require(n_svc_large >= 0 && n_svc_small >= 0, ErrorCode::invalid_parameter,
          "SVC counts must be >= 0");
  require(group_size >= 1, ErrorCode::invalid_parameter, "group size must be >= 1");
  require(n >= 2 * group_size, ErrorCode::invalid_parameter,
          "n must be at least twice the group size");
  require(knot_count() >= 2 && static_cast<std::size_t>(knot_count()) <= n,
          ErrorCode::invalid_parameter, "knot count must lie in [2, n]");
}

namespace {

double sample_sd(const Eigen::VectorXd &v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

Eigen::VectorXd normal_vector(Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) {
    v(i) = z(rng);
  }
  return v;
}

// tau * E gamma / sqrt(s_k) with gamma ~ N(0, Lambda^k); s_k is the average
// row variance sum_l lambda_l^k e_il^2, so the process has mean variance tau^2.
Eigen::VectorXd scaled_process(const RowMatrix &basis, const Eigen::VectorXd &lambda,
                               double power, double tau, std::mt19937_64 &rng) {
  const Eigen::VectorXd var = lambda.array().pow(power).matrix();
  const Eigen::VectorXd gamma = normal_vector(lambda.size(), rng).cwiseProduct(var.cwiseSqrt());
  const double s = (basis.array().square().matrix() * var).mean();
  return (tau / std::sqrt(s)) * (basis * gamma);
}

} // namespace

SimCovariate generate_covariate(const BasisFactory &factory, const RowMatrix &basis,
                                double s_x, std::mt19937_64 &rng) {
  require(s_x >= 0.0 && s_x < 1.0, ErrorCode::invalid_parameter, "s_x must lie in [0, 1)");
  const Eigen::VectorXd &lambda = factory.lambda_hat();
  require(basis.cols() == lambda.size(), ErrorCode::invalid_input,
          "basis width does not match the factory");
  const Eigen::VectorXd eps = normal_vector(basis.rows(), rng);
  const Eigen::VectorXd gamma =
      normal_vector(lambda.size(), rng).cwiseProduct(lambda.cwiseSqrt());
  const Eigen::VectorXd raw = basis * gamma;
  SimCovariate out;
  out.spatial = raw / sample_sd(raw);
  out.x = (1.0 - s_x) * eps + s_x * out.spatial;
  return out;
}

SimCovariate generate_covariate(const BasisFactory &factory, const Coords &coords,
                                double s_x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return generate_covariate(factory, factory.nystrom_block(coords), s_x, rng);
}

DataBlock SimDataset::table() const {
  DataBlock b;
  b.coords = coords;
  b.y = y;
  b.covariates = x;
  b.labels = {labels};
  return b;
}

SimDataset generate_dataset(const SimConfig &config) {
  config.validate();
  const auto n = static_cast<Index>(config.n);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SimDataset d;
  d.coords.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    d.coords(i, 0) = unit(rng);
    d.coords(i, 1) = unit(rng);
  }
  const Index l = config.knot_count();
  const KnotSet knots = select_knots(d.coords, l, config.seed, config.n);
  d.factory = make_factory(knots, config.n, config.scaling, static_cast<int>(l));
  const RowMatrix basis = d.factory.nystrom_block(d.coords);
  const Eigen::VectorXd &lambda = d.factory.lambda_hat();
  const double tau = std::sqrt(config.tau2);

  const int p = config.svc_count();
  d.x.resize(n, p);
  for (int k = 0; k < p; ++k) {
    d.x.col(k) = generate_covariate(d.factory, basis, config.s_x, rng).x;
  }
  d.w0 = scaled_process(basis, lambda, 1.0, tau, rng);
  d.beta.resize(n, p);
  for (int k = 0; k < p; ++k) {
    const double power = k < config.n_svc_large ? 3.0 : 0.5;
    d.beta.col(k) = scaled_process(basis, lambda, power, tau, rng).array() + 1.0;
  }

  // Random partition into floor(n / size) groups; leftovers join the last.
  const auto groups = static_cast<Index>(config.n / config.group_size);
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  d.group_of.assign(n, 0);
  for (Index i = 0; i < n; ++i) {
    d.group_of[order[i]] =
        std::min(groups - 1, i / static_cast<Index>(config.group_size));
  }
  const Eigen::VectorXd effect =
      std::sqrt(config.tau_g2_ratio * config.tau2) * normal_vector(groups, rng);
  d.g.resize(n);
  d.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    d.g(i) = effect(d.group_of[i]);
    d.labels[i] = "g" + std::to_string(d.group_of[i]);
  }

  Eigen::VectorXd signal = d.w0 + d.g;
  for (int k = 0; k < p; ++k) {
    signal += d.x.col(k).cwiseProduct(d.beta.col(k));
  }
  d.signal_sd = sample_sd(signal);
  d.sigma = 0.3 * d.signal_sd;
  d.y = signal + d.sigma * normal_vector(n, rng);
  return d;
}

double rmse(const std::vector<Eigen::VectorXd> &estimates,
            const std::vector<Eigen::VectorXd> &truths) {
  require(estimates.size() == truths.size() && !estimates.empty(),
          ErrorCode::invalid_input, "rmse needs matching, nonempty replicate lists");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    require(estimates[r].size() == truths[r].size(), ErrorCode::invalid_input,
            "rmse: replicate " + std::to_string(r) + " lengths differ");
    sum += (estimates[r] - truths[r]).squaredNorm();
    count += static_cast<std::size_t>(truths[r].size());
  }
  require(count > 0, ErrorCode::invalid_input, "rmse of empty vectors");
  return std::sqrt(sum / static_cast<double>(count));
}

double rmse(const Eigen::VectorXd &estimate, const Eigen::VectorXd &truth) {
  return rmse(std::vector<Eigen::VectorXd>{estimate}, std::vector<Eigen::VectorXd>{truth});
}

ModelOutcome fit_replicate(const SimDataset &data, const SimConfig &config,
                           bool with_group, const RemlControls &controls) {
  ModelOutcome out;
  const auto started = std::chrono::steady_clock::now();
  try {
    RunConfig rc;
    rc.response = "y";
    const int p = config.svc_count();
    for (int k = 0; k < p; ++k) {
      rc.svc.push_back("x" + std::to_string(k + 1));
    }
    if (with_group) {
      rc.groups = {"group"};
    }
    rc.knots = config.knot_count();
    rc.block_rows = config.n;
    rc.seed = config.seed;
    rc.scaling = config.scaling;
    rc.controls = controls;

    DataBlock table = data.table();
    if (!with_group) {
      table.labels.clear();
    }
    MemorySource source(table);
    const FitReport report = fit_source(rc, source);
    const FittedModel &m = report.model;
    const Prediction pred = predict_response(m, table);

    out.svc_rmse.resize(p);
    out.alpha.resize(p);
    for (int k = 0; k < p; ++k) {
      out.svc_rmse(k) = rmse(Eigen::VectorXd(pred.effects.col(k)), Eigen::VectorXd(data.beta.col(k)));
      out.alpha(k) = m.fit.theta.terms[k].alpha;
    }
    out.residual_rmse = rmse(Eigen::VectorXd(pred.effects.col(p)), data.w0);
    out.residual_alpha = m.fit.theta.terms[p].alpha;
    out.group_rmse = with_group ? rmse(Eigen::VectorXd(pred.effects.col(p + 1)), data.g)
                                : rmse(Eigen::VectorXd::Zero(data.g.size()), data.g);
    out.sweeps = m.fit.sweeps;
    out.converged = m.fit.converged;
    out.ok = true;
  } catch (const std::exception &e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

std::uint64_t replicate_seed(std::uint64_t cell_seed, int replicate) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = cell_seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(replicate) + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<CellResult> run_experiment(const std::vector<SimConfig> &cells,
                                       const ExperimentOptions &options) {
  require(options.replicates >= 1, ErrorCode::invalid_parameter, "replicates must be >= 1");
  require(options.workers >= 1, ErrorCode::invalid_parameter, "workers must be >= 1");
  std::vector<CellResult> results(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].validate();
    results[c].config = cells[c];
    results[c].replicates.resize(options.replicates);
  }
  const std::size_t tasks = cells.size() * static_cast<std::size_t>(options.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t c = t / options.replicates;
      const int r = static_cast<int>(t % options.replicates);
      SimConfig config = cells[c];
      config.seed = replicate_seed(cells[c].seed, r);
      ReplicateOutcome &out = results[c].replicates[r];
      out.seed = config.seed;
      try {
        const SimDataset data = generate_dataset(config);
        out.full = fit_replicate(data, config, true, options.controls);
        out.no_group = fit_replicate(data, config, false, options.controls);
      } catch (const std::exception &e) {
        out.full.error = out.no_group.error = e.what();
      }
    }
  };
  if (options.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < options.workers; ++w) {
      pool.emplace_back(worker);
    }
    for (auto &t : pool) {
      t.join();
    }
  }
  return results;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct TermColumn {
  double rmse;
  double median_alpha;
  int failures;
  double mean_seconds;
};

// Pools squared errors over successful replicates (the RMSE of every row and
// replicate), and summarizes alpha for spatial terms.
TermColumn summarize(const CellResult &cell, bool full, int term) {
  const int p = cell.config.svc_count();
  double sq = 0.0;
  int ok = 0;
  int failures = 0;
  double seconds = 0.0;
  std::vector<double> alphas;
  for (const auto &rep : cell.replicates) {
    const ModelOutcome &m = full ? rep.full : rep.no_group;
    if (!m.ok) {
      ++failures;
      continue;
    }
    ++ok;
    seconds += m.seconds;
    double r = 0.0;
    if (term < p) {
      r = m.svc_rmse(term);
      alphas.push_back(m.alpha(term));
    } else if (term == p) {
      r = m.residual_rmse;
      alphas.push_back(m.residual_alpha);
    } else {
      r = m.group_rmse;
    }
    sq += r * r;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {ok > 0 ? std::sqrt(sq / ok) : nan, median(alphas), failures,
          ok > 0 ? seconds / ok : nan};
}

} // namespace

void write_summary(std::ostream &out, const std::vector<CellResult> &cells,
                   bool timings) {
  out << "cell,n,s_x,tau_g2_ratio,cell_seed,replicates,term,scale,"
         "rmse_full,rmse_no_group,median_alpha_full,median_alpha_no_group,"
         "failures_full,failures_no_group" << (timings ? ",seconds_full,seconds_no_group" : "")
      << "\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const SimConfig &cfg = cells[c].config;
    const int p = cfg.svc_count();
    for (int term = 0; term <= p + 1; ++term) {
      std::string name, scale;
      if (term < p) {
        name = "svc_x" + std::to_string(term + 1);
        scale = term < cfg.n_svc_large ? "large" : "small";
      } else if (term == p) {
        name = "spatial";
        scale = "moderate";
      } else {
        name = "group";
        scale = "none";
      }
      const TermColumn a = summarize(cells[c], true, term);
      const TermColumn b = summarize(cells[c], false, term);
      char buf[512];
      std::snprintf(buf, sizeof(buf),
                    "%zu,%zu,%.17g,%.17g,%llu,%zu,%s,%s,%.17g,%.17g,%.17g,%.17g,%d,%d",
                    c, cfg.n, cfg.s_x, cfg.tau_g2_ratio,
                    static_cast<unsigned long long>(cfg.seed), cells[c].replicates.size(),
                    name.c_str(), scale.c_str(), a.rmse, b.rmse, a.median_alpha,
                    b.median_alpha, a.failures, b.failures);
      out << buf;
      if (timings) {
        std::snprintf(buf, sizeof(buf), ",%.6g,%.6g", a.mean_seconds, b.mean_seconds);
        out << buf;
      }
      out << '\n';
    }
  }
}

} // namespace mesa
