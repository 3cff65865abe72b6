// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when a selected criterion fails, unless it is listed with --expect-fail,
// in which case an unexpected pass is the error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "helpers.hpp"
#include "mesa/pipeline.hpp"
#include "mesa/sim.hpp"

using namespace mesa;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Criterion 1 -------------------------------------------------------------

Outcome compression_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_ll = 0.0, worst_coef = 0.0, worst_se = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    helpers::ScenarioOptions o;
    o.seed = 100 + static_cast<std::uint64_t>(inst);
    o.n = std::uniform_int_distribution<Index>(120, 500)(rng);
    o.covariates = std::uniform_int_distribution<int>(1, 2)(rng);
    o.svc = std::uniform_int_distribution<int>(0, o.covariates)(rng);
    o.residual = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    o.group = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    if (o.svc + (o.residual ? 1 : 0) + (o.group ? 1 : 0) == 0) {
      o.residual = true;
    }
    if (o.svc + (o.residual ? 1 : 0) + (o.group ? 1 : 0) > 3) {
      o.svc = 1;
    }
    o.knots = std::uniform_int_distribution<Index>(6, 20)(rng);
    const helpers::Scenario s = helpers::make_scenario(o);
    const InnerProductStore store = helpers::store_for(s, 1 + inst % 4);
    RemlControls controls;
    controls.verify_ascent = true;
    const FitResult f = fit(s.spec, store, s.factory.lambda_hat(), controls);

    const oracle::DenseModel dense = helpers::dense_model(s, f.theta);
    worst_ll = std::max(worst_ll, std::abs(dense.loglik() - f.loglik));
    const Eigen::VectorXd c = dense.coefficients();
    const Index k = f.b.size();
    worst_coef = std::max(worst_coef, oracle::max_rel_diff(f.b, c.head(k)));
    Index off = k;
    for (const auto &u : f.u) {
      worst_coef = std::max(worst_coef, oracle::max_rel_diff(u, c.segment(off, u.size())));
      off += u.size();
    }
    const Eigen::VectorXd se = dense.covariance().diagonal().cwiseSqrt();
    worst_se = std::max(worst_se, oracle::max_rel_diff(f.fixed_covariance.diagonal().cwiseSqrt(), se.head(k)));
    off = k;
    for (std::size_t p = 0; p < s.spec.terms.size(); ++p) {
      const TermSpec &t = s.spec.terms[p];
      const Eigen::MatrixXd &block = f.se_blocks[p];
      if (t.kind == TermKind::group) {
        worst_se = std::max(worst_se, oracle::max_rel_diff(block.col(0).cwiseSqrt(), se.segment(off, t.width)));
      } else if (t.kind == TermKind::svc) {
        const Eigen::VectorXd d = block.diagonal().cwiseSqrt();
        worst_se = std::max(worst_se, std::abs(d(0) - se(s.spec.fixed_column(t))) / se(s.spec.fixed_column(t)));
        worst_se = std::max(worst_se, oracle::max_rel_diff(d.tail(t.width), se.segment(off, t.width)));
      } else {
        worst_se = std::max(worst_se, oracle::max_rel_diff(block.diagonal().cwiseSqrt(), se.segment(off, t.width)));
      }
      off += t.width;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "20 instances: max |dloglik| " << fmt("%.2e", worst_ll) << ", coef rel " << fmt("%.2e", worst_coef)
    << ", SE rel " << fmt("%.2e", worst_se) << ", " << fmt("%.1f", secs) << " s";
  return {worst_ll <= 1e-8 && worst_coef <= 1e-8 && worst_se <= 1e-6 && secs < 60.0, d.str()};
}

// Criterion 2 -------------------------------------------------------------

Outcome moran_identity() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  Index pairs = 0;
  for (int set = 0; set < 5; ++set) {
    const Index n = 60 + 35 * set;
    const Coords sites = oracle::random_sites(n, rng);
    const double range = mst_range(sites);
    const ProximityMatrix c0 = proximity_matrix(sites, range);
    const Eigen::MatrixXd m = oracle::centering(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m * c0.values * m);
    const double total = c0.values.sum();
    for (Index l = 0; l < n; ++l) {
      const double lambda = es.eigenvalues()(l);
      if (lambda <= kEigenvalueFloor * es.eigenvalues().cwiseAbs().maxCoeff()) {
        continue;
      }
      const double mc = moran_coefficient(es.eigenvectors().col(l), c0);
      const double expect = static_cast<double>(n) * lambda / total;
      worst = std::max(worst, std::abs(mc - expect));
      ++pairs;
    }
    // The library's eigenpairs of M C M (unit diagonal) carry the same
    // identity after removing the diagonal's unit shift.
    KnotSet all;
    all.centers = sites;
    all.range = range;
    const KnotEigen ke = knot_eigen(all, static_cast<int>(n));
    for (Index l = 0; l < ke.size(); ++l) {
      const double lambda = ke.values(l) - 1.0;
      if (lambda <= 0.0) {
        continue;
      }
      const double mc = moran_coefficient(ke.vectors.col(l), c0);
      worst = std::max(worst, std::abs(mc - static_cast<double>(n) * lambda / total));
      ++pairs;
    }
  }
  return {worst <= 1e-10, std::to_string(pairs) + " eigenpairs over 5 site sets: max |MC - N lambda/1'C0 1| " +
                              fmt("%.2e", worst)};
}

// Criterion 3 -------------------------------------------------------------

Outcome expected_mc_limits() {
  bool monotone = true;
  double worst = 0.0, worst_far = 0.0;
  for (std::uint64_t seed : {1u, 2u}) {
    SimConfig c;
    c.seed = seed;
    const SimDataset d = generate_dataset(c);
    const double scale = mc_scale(proximity_matrix(d.coords, d.factory.knots().range));
    for (ScalingMode mode : {ScalingMode::as_printed, ScalingMode::n_over_l}) {
      const BasisFactory f = make_factory(d.factory.knots(), c.n, mode);
      const Eigen::VectorXd &lh = f.lambda_hat();
      const std::span<const double> span(lh.data(), static_cast<std::size_t>(lh.size()));
      double prev = -std::numeric_limits<double>::infinity();
      for (int a = -10; a <= 10; a += 5) {
        const double v = expected_mc(span, a, scale);
        monotone = monotone && v > prev;
        prev = v;
      }
      auto gap = [&](double a) {
        return std::max(std::abs(expected_mc(span, a, scale) - scale * lh.maxCoeff()),
                        std::abs(expected_mc(span, -a, scale) - scale * lh.minCoeff()));
      };
      worst = std::max(worst, gap(50.0));
      worst_far = std::max(worst_far, gap(1000.0));
    }
  }
  std::ostringstream d;
  d << "monotone over alpha in {-10,...,10}: " << (monotone ? "yes" : "no") << "; max limit error at |alpha| = 50 "
    << fmt("%.2e", worst) << " (at |alpha| = 1000: " << fmt("%.2e", worst_far) << ")";
  return {monotone && worst <= 1e-6, d.str()};
}

// Criterion 4 -------------------------------------------------------------

Outcome nystrom_at_knots() {
  std::mt19937_64 rng(11);
  const Coords sites = oracle::random_sites(400, rng);
  double worst = 0.0;
  for (Index l : {5, 20, 50}) {
    const BasisFactory f = make_factory(select_knots(sites, l, 3), 400);
    const KnotEigen &e = f.eigen();
    const Eigen::MatrixXd expect = e.vectors * (e.values.array() / (e.values.array() + 1.0)).matrix().asDiagonal();
    const RowMatrix rows = f.nystrom_block(f.knots().centers);
    worst = std::max(worst, (rows - expect).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, "L in {5, 20, 50}: max abs difference " + fmt("%.2e", worst)};
}

// Criterion 5 -------------------------------------------------------------

double store_rel_diff(const InnerProductStore &a, const InnerProductStore &b) {
  double worst = std::abs(a.yy - b.yy) / std::abs(b.yy);
  auto upd = [&](const Eigen::MatrixXd &x, const Eigen::MatrixXd &y) {
    worst = std::max(worst, oracle::max_rel_diff(x, y));
  };
  upd(a.xy, b.xy);
  upd(a.xx, b.xx);
  for (std::size_t i = 0; i < a.ay.size(); ++i) {
    upd(a.ay[i], b.ay[i]);
    upd(a.xa[i], b.xa[i]);
  }
  for (std::size_t i = 0; i < a.aa.size(); ++i) {
    upd(a.aa[i], b.aa[i]);
  }
  return worst;
}

Outcome block_invariance() {
  double worst_store = 0.0, worst_theta = 0.0;
  for (std::uint64_t seed : {31u, 32u}) {
    helpers::ScenarioOptions o;
    o.n = 700;
    o.covariates = 2;
    o.svc = 1;
    o.group = true;
    o.knots = 25;
    o.seed = seed;
    const helpers::Scenario s = helpers::make_scenario(o);
    RemlControls controls;
    controls.verify_ascent = true;
    const InnerProductStore ref = helpers::store_for(s, 1);
    const FitResult base = fit(s.spec, ref, s.factory.lambda_hat(), controls);
    for (Index h : {2, 3, 7}) {
      const InnerProductStore st = helpers::store_for(s, h);
      worst_store = std::max(worst_store, store_rel_diff(st, ref));
      const FitResult f = fit(s.spec, st, s.factory.lambda_hat(), controls);
      for (std::size_t p = 0; p < s.spec.terms.size(); ++p) {
        const TermParams &a = f.theta.terms[p];
        const TermParams &b = base.theta.terms[p];
        worst_theta = std::max(worst_theta, std::abs(a.tau - b.tau) / std::max(1.0, std::abs(b.tau)));
        worst_theta = std::max(worst_theta, std::abs(a.alpha - b.alpha));
      }
    }
  }
  return {worst_store <= 1e-10 && worst_theta <= 1e-6,
          "H in {1, 2, 3, 7}: store rel " + fmt("%.2e", worst_store) + ", theta " + fmt("%.2e", worst_theta)};
}

// Criteria 6 and 7 --------------------------------------------------------

double large_scale_rmse(const ModelOutcome &m, int large) {
  return std::sqrt(m.svc_rmse.head(large).squaredNorm() / large);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int k, int n) {
  double p = 0.0;
  for (int i = k; i <= n; ++i) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return p;
}

struct SimOutcomes {
  Outcome ordering;
  Outcome scale;
};

SimOutcomes simulation(int replicates, int workers) {
  const auto t0 = Clock::now();
  std::vector<SimConfig> cells(2);
  for (std::size_t c = 0; c < 2; ++c) {
    cells[c].n = 1000;
    cells[c].s_x = 0.5;
    cells[c].tau_g2_ratio = c == 0 ? 0.0 : 1.0;
    cells[c].seed = 1 + c;
  }
  ExperimentOptions opt;
  opt.replicates = replicates;
  opt.workers = workers;
  const auto results = run_experiment(cells, opt);
  const double secs = seconds_since(t0);
  const int large = cells[0].n_svc_large;
  const int small = cells[0].n_svc_small;

  SimOutcomes out;
  std::ostringstream d6;
  bool ok6 = secs < 1800.0;
  int failures = 0;
  int scale_hits = 0, scale_total = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> diff, full, plain;
    for (const auto &r : results[c].replicates) {
      if (r.full.ok) {
        ++scale_total;
        std::vector<double> a_large(r.full.alpha.data(), r.full.alpha.data() + large);
        std::vector<double> a_small(r.full.alpha.data() + large, r.full.alpha.data() + large + small);
        scale_hits += median(a_large) > median(a_small) ? 1 : 0;
      }
      if (!r.full.ok || !r.no_group.ok) {
        ++failures;
        continue;
      }
      full.push_back(large_scale_rmse(r.full, large));
      plain.push_back(large_scale_rmse(r.no_group, large));
      diff.push_back(plain.back() - full.back());
    }
    const double n = static_cast<double>(diff.size());
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : diff) {
      ss += (v - mean) * (v - mean);
    }
    const double se = std::sqrt(ss / (n - 1.0) / n);
    if (c == 0) {
      const bool pass = std::abs(mean) <= 2.0 * se;
      ok6 = ok6 && pass;
      d6 << "tau_g2=0: mean paired diff " << fmt("%.4f", mean) << " (2 SE " << fmt("%.4f", 2.0 * se) << ")";
    } else {
      int positive = 0, nonzero = 0;
      for (double v : diff) {
        positive += v > 0.0 ? 1 : 0;
        nonzero += v != 0.0 ? 1 : 0;
      }
      const double p = sign_test_p(positive, nonzero);
      const bool pass = p < 0.05 && median(plain) > median(full);
      ok6 = ok6 && pass;
      d6 << "; tau_g2=tau2: median RMSE without group " << fmt("%.4f", median(plain)) << " vs with "
         << fmt("%.4f", median(full)) << ", " << positive << "/" << nonzero << " positive, sign test p "
         << fmt("%.2e", p);
    }
  }
  d6 << "; " << failures << " failed replicates; " << fmt("%.0f", secs) << " s";
  out.ordering = {ok6 && failures == 0, d6.str()};
  const double share = scale_total ? static_cast<double>(scale_hits) / scale_total : 0.0;
  out.scale = {share >= 0.9, "median alpha large > small in " + std::to_string(scale_hits) + "/" +
                                 std::to_string(scale_total) + " replicates (" + fmt("%.0f", 100 * share) + "%)"};
  return out;
}

// Criterion 8 -------------------------------------------------------------

DataBlock smooth_table(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  DataBlock t;
  t.coords = oracle::random_sites(n, rng);
  t.covariates.resize(n, 1);
  t.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double u = t.coords(i, 0), v = t.coords(i, 1);
    const double x = z(rng);
    t.covariates(i, 0) = x;
    const double beta = 1.0 + std::sin(3.0 * u) * std::cos(2.0 * v);
    t.y(i) = 0.5 + beta * x + std::cos(5.0 * u + v) + 0.5 * z(rng);
  }
  return t;
}

Outcome cost_independence() {
  RunConfig cfg;
  cfg.response = "y";
  cfg.svc = {"x1"};
  cfg.knots = 200;
  cfg.block_rows = 10000;
  cfg.controls.verify_ascent = true;
  FitReport small, large;
  {
    MemorySource source(smooth_table(10000, 5));
    small = fit_source(cfg, source);
  }
  {
    MemorySource source(smooth_table(100000, 5));
    large = fit_source(cfg, source);
  }
  const double est = large.times.estimate / small.times.estimate;
  const double acc = large.times.accumulate / small.times.accumulate;
  std::ostringstream d;
  d << "estimate " << fmt("%.2f", small.times.estimate) << " s -> " << fmt("%.2f", large.times.estimate)
    << " s (x" << fmt("%.2f", est) << ", limit 2); accumulate " << fmt("%.2f", small.times.accumulate) << " s -> "
    << fmt("%.2f", large.times.accumulate) << " s (x" << fmt("%.2f", acc) << ", limit 13); widths "
    << small.model.factory.size() << "/" << large.model.factory.size();
  return {est <= 2.0 && acc <= 13.0, d.str()};
}

// Criterion 9 -------------------------------------------------------------

Outcome memory_bound(std::size_t rows) {
  helpers::TempDir dir("accept_memory");
  const std::string csv = dir.file("big.csv");
  {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unit;
    std::normal_distribution<double> z;
    std::ofstream out(csv);
    out << "x,y,resp\n";
    char line[96];
    for (std::size_t i = 0; i < rows; ++i) {
      const double u = unit(rng), v = unit(rng);
      std::snprintf(line, sizeof line, "%.9f,%.9f,%.9f\n", u, v, std::sin(4.0 * u) + std::cos(3.0 * v) + z(rng));
      out << line;
    }
  }
  RunConfig cfg;
  cfg.input = csv;
  cfg.output_dir = dir.file("out");
  cfg.response = "resp";
  cfg.knots = 50;
  cfg.block_rows = 10000;
  cfg.workers = 2;
  const auto t0 = Clock::now();
  const FitReport r = run_fit(cfg);
  const double secs = seconds_since(t0);
  const std::size_t per_worker = cfg.block_rows * static_cast<std::size_t>(r.model.factory.size());
  const bool ok = r.rows == rows && r.memory.largest_entries <= per_worker &&
                  r.memory.peak_live_entries <= per_worker * static_cast<std::size_t>(cfg.workers);
  std::ostringstream d;
  d << r.rows << " rows in " << r.blocks << " blocks: largest basis " << r.memory.largest_entries
    << " entries, peak live " << r.memory.peak_live_entries << ", bound " << per_worker << " per worker x "
    << cfg.workers << "; store " << r.store.order() * r.store.order() << " entries; " << fmt("%.0f", secs) << " s";
  return {ok, d.str()};
}

// Criterion 10 ------------------------------------------------------------

Outcome ascent_safety(const std::string &dir, const std::vector<std::string> &binaries) {
  double worst = ascent_record().worst_decrease;
  std::size_t calls = ascent_record().calls;
  std::vector<std::string> missing;
  for (const auto &name : binaries) {
    std::ifstream in(std::filesystem::path(dir) / (name + ".txt"));
    std::size_t c = 0;
    double w = 0.0;
    if (!(in >> c >> w)) {
      missing.push_back(name);
      continue;
    }
    calls += c;
    worst = std::max(worst, w);
  }
  std::ostringstream d;
  d << calls << " optimize_term calls, worst decrease " << fmt("%.2e", worst);
  for (const auto &m : missing) {
    d << "; no record from " << m;
  }
  return {worst <= 1e-9 && missing.empty(), d.str()};
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::vector<int> expect_fail;
  int replicates = 50;
  int workers = 1;
  std::size_t memory_rows = 1000000;
  app.add_option("--only", only, "criteria to run (default: all)");
  app.add_option("--expect-fail", expect_fail, "criteria known not to hold");
  app.add_option("--replicates", replicates, "simulation replicates per cell")->capture_default_str();
  app.add_option("--workers", workers, "parallel simulation replicates")->capture_default_str();
  app.add_option("--memory-rows", memory_rows, "rows of the streamed memory table")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  auto selected = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  reset_ascent_record();
  bool all = true;
  auto report = [&](int c, const Outcome &o) {
    const bool expected =
        std::find(expect_fail.begin(), expect_fail.end(), c) != expect_fail.end();
    all = all && o.pass != expected;
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << (expected ? " (expected FAIL)" : "")
              << "  " << o.detail << std::endl;
  };
  auto run = [&](int c, const std::function<Outcome()> &f) {
    if (!selected(c)) {
      return;
    }
    try {
      report(c, f());
    } catch (const std::exception &e) {
      report(c, {false, std::string("threw: ") + e.what()});
    }
  };

  run(1, compression_oracle);
  run(2, moran_identity);
  run(3, expected_mc_limits);
  run(4, nystrom_at_knots);
  run(5, block_invariance);
  if (selected(6) || selected(7)) {
    try {
      const SimOutcomes s = simulation(replicates, workers);
      if (selected(6)) {
        report(6, s.ordering);
      }
      if (selected(7)) {
        report(7, s.scale);
      }
    } catch (const std::exception &e) {
      for (int c : {6, 7}) {
        if (selected(c)) {
          report(c, {false, std::string("threw: ") + e.what()});
        }
      }
    }
  }
  run(8, cost_independence);
  run(9, [&] { return memory_bound(memory_rows); });
  run(10, [] {
    return ascent_safety(MESA_ASCENT_DIR, {"test_basis", "test_terms", "test_accumulate", "test_reml",
                                           "test_predict", "test_sim", "test_cli"});
  });
  return all ? 0 : 1;
}
