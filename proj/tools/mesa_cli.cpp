// Command-line front end: fit, predict, simulate, inspect.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mesa/error.hpp"
#include "mesa/pipeline.hpp"
#include "mesa/sim.hpp"

namespace {

using namespace mesa;

char delimiter_from(const std::string &s) {
  if (s == "\\t" || s == "tab") {
    return '\t';
  }
  require(s.size() == 1, ErrorCode::invalid_parameter, "delimiter must be one character");
  return s[0];
}

void add_controls(CLI::App *app, RemlControls &c) {
  app->add_option("--log-tau2-min", c.log_tau2_min, "lower bound of log(tau^2/sigma^2)");
  app->add_option("--log-tau2-max", c.log_tau2_max, "upper bound of log(tau^2/sigma^2)");
  app->add_option("--alpha-min", c.alpha_min, "lower bound of alpha");
  app->add_option("--alpha-max", c.alpha_max, "upper bound of alpha");
  app->add_option("--optimizer-tol", c.optimizer_tolerance, "per-term loglik tolerance");
  app->add_option("--max-evaluations", c.max_evaluations, "per-term likelihood evaluations");
  app->add_option("--outer-tol", c.outer_tolerance, "sweep loglik tolerance");
  app->add_option("--max-sweeps", c.max_sweeps, "maximum coordinate-ascent sweeps");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Spatial additive mixed models with Moran eigenvector bases"};
  app.set_config("--config", "", "key = value configuration file ([fit], [simulate] sections)");
  app.require_subcommand(1);

  // fit
  RunConfig fit_cfg;
  std::string fit_delim = ",";
  std::string scaling = "as_printed";
  bool no_residual = false;
  bool no_intercept = false;
  auto *fit_cmd = app.add_subcommand("fit", "fit a model to a delimited table");
  fit_cmd->add_option("--input,-i", fit_cfg.input, "input table")->required();
  fit_cmd->add_option("--output,-o", fit_cfg.output_dir, "output directory")->required();
  fit_cmd->add_option("--response,-r", fit_cfg.response, "response column")->required();
  fit_cmd->add_option("--x", fit_cfg.x_column, "x coordinate column")->capture_default_str();
  fit_cmd->add_option("--y", fit_cfg.y_column, "y coordinate column")->capture_default_str();
  fit_cmd->add_option("--svc", fit_cfg.svc, "covariates with spatially varying coefficients");
  fit_cmd->add_option("--fixed", fit_cfg.fixed_only, "covariates with constant coefficients");
  fit_cmd->add_option("--group", fit_cfg.groups, "label columns with group random effects");
  fit_cmd->add_flag("--no-residual", no_residual, "omit the residual spatial term");
  fit_cmd->add_flag("--no-intercept", no_intercept, "omit the intercept column");
  fit_cmd->add_option("--knots", fit_cfg.knots, "number of k-means knots")->capture_default_str();
  fit_cmd->add_option("--max-pairs", fit_cfg.max_pairs, "maximum retained eigenpairs")->capture_default_str();
  fit_cmd->add_option("--block-rows", fit_cfg.block_rows, "target rows per block")->capture_default_str();
  fit_cmd->add_option("--workers", fit_cfg.workers, "accumulation workers")->capture_default_str();
  fit_cmd->add_option("--seed", fit_cfg.seed, "random seed")->capture_default_str();
  fit_cmd->add_option("--reservoir", fit_cfg.reservoir, "site sample size for knots")->capture_default_str();
  fit_cmd->add_option("--scaling", scaling, "eigenvalue scaling: as_printed or n_over_l")->capture_default_str();
  fit_cmd->add_option("--delimiter", fit_delim, "field delimiter")->capture_default_str();
  add_controls(fit_cmd, fit_cfg.controls);

  // predict
  std::string model_path, pred_input, pred_output, pred_delim = ",";
  std::size_t pred_block = 10000;
  auto *pred_cmd = app.add_subcommand("predict", "predict at new sites");
  pred_cmd->add_option("--model,-m", model_path, "model file")->required();
  pred_cmd->add_option("--input,-i", pred_input, "table of new sites")->required();
  pred_cmd->add_option("--output,-o", pred_output, "prediction table")->required();
  pred_cmd->add_option("--block-rows", pred_block, "target rows per block")->capture_default_str();
  pred_cmd->add_option("--delimiter", pred_delim, "field delimiter")->capture_default_str();

  // simulate
  std::vector<std::size_t> sim_n{1000};
  std::vector<double> sim_sx{0.5};
  std::vector<double> sim_tg{0.0, 1.0};
  SimConfig sim_base;
  ExperimentOptions sim_opts;
  std::string sim_out;
  bool sim_timings = false;
  auto *sim_cmd = app.add_subcommand("simulate", "run the Monte Carlo experiment");
  sim_cmd->add_option("--n", sim_n, "sample sizes")->capture_default_str();
  sim_cmd->add_option("--sx", sim_sx, "spatial shares of the covariates")->capture_default_str();
  sim_cmd->add_option("--tau-g2-ratio", sim_tg, "group variance ratios")->capture_default_str();
  sim_cmd->add_option("--tau2", sim_base.tau2, "spatial process variance")->capture_default_str();
  sim_cmd->add_option("--knots", sim_base.knots, "knots (0: min(200, n/2))")->capture_default_str();
  sim_cmd->add_option("--replicates", sim_opts.replicates, "replicates per cell")->capture_default_str();
  sim_cmd->add_option("--workers", sim_opts.workers, "parallel replicates")->capture_default_str();
  sim_cmd->add_option("--seed", sim_base.seed, "base seed")->capture_default_str();
  sim_cmd->add_option("--output,-o", sim_out, "output directory")->required();
  sim_cmd->add_flag("--timings", sim_timings, "add mean fit seconds to the summary");
  add_controls(sim_cmd, sim_opts.controls);

  // inspect
  std::string inspect_path;
  auto *inspect_cmd = app.add_subcommand("inspect", "print a model file's parameters");
  inspect_cmd->add_option("model", inspect_path, "model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fit_cmd) {
      fit_cfg.delimiter = delimiter_from(fit_delim);
      fit_cfg.scaling = scaling_mode_from_string(scaling);
      fit_cfg.residual = !no_residual;
      fit_cfg.intercept = !no_intercept;
      const FitReport report = run_fit(fit_cfg);
      std::cout << "fitted " << report.rows << " rows in " << report.blocks
                << " blocks; loglik_R " << report.model.fit.loglik << ", sigma2 "
                << report.model.fit.sigma2 << ", sweeps " << report.model.fit.sweeps
                << (report.model.fit.converged ? "" : " (not converged)") << "\n";
      return 0;
    }
    if (*pred_cmd) {
      const std::size_t rows =
          run_predict(model_path, pred_input, pred_output, pred_block, delimiter_from(pred_delim));
      std::cout << "predicted " << rows << " rows\n";
      return 0;
    }
    if (*sim_cmd) {
      std::vector<SimConfig> cells;
      std::uint64_t cell = 0;
      for (std::size_t n : sim_n) {
        for (double sx : sim_sx) {
          for (double tg : sim_tg) {
            SimConfig c = sim_base;
            c.n = n;
            c.s_x = sx;
            c.tau_g2_ratio = tg;
            c.seed = sim_base.seed + cell++;
            cells.push_back(c);
          }
        }
      }
      const auto results = run_experiment(cells, sim_opts);
      std::filesystem::create_directories(sim_out);
      const std::filesystem::path dir(sim_out);
      std::ofstream summary(dir / "summary.csv");
      write_summary(summary, results, sim_timings);
      std::ofstream seeds(dir / "seeds.csv");
      seeds << "cell,replicate,seed,error_full,error_no_group\n";
      for (std::size_t c = 0; c < results.size(); ++c) {
        for (std::size_t r = 0; r < results[c].replicates.size(); ++r) {
          const auto &rep = results[c].replicates[r];
          seeds << c << ',' << r << ',' << rep.seed << ",\"" << rep.full.error << "\",\""
                << rep.no_group.error << "\"\n";
        }
      }
      std::cout << "wrote " << results.size() << " cells to " << sim_out << "\n";
      return 0;
    }
    if (*inspect_cmd) {
      inspect_model(inspect_path, std::cout);
      return 0;
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_status(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
