#include "mesa/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

#include "mesa/error.hpp"

namespace mesa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void append_number(std::string &out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

// Mean kernel value over distinct pairs of an evenly strided subsample.
double mean_off_diagonal_kernel(const Coords &sample, double range,
                                std::size_t max_points) {
  const auto n = static_cast<std::size_t>(sample.rows());
  const std::size_t m = std::min(n, max_points);
  if (m < 2) {
    return 0.0;
  }
  std::vector<Index> pick(m);
  for (std::size_t i = 0; i < m; ++i) {
    pick[i] = static_cast<Index>(i * n / m);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double d = (sample.row(pick[i]) - sample.row(pick[j])).norm();
      sum += exp_kernel(d, range);
    }
  }
  return sum / (0.5 * static_cast<double>(m) * static_cast<double>(m - 1));
}

} // namespace

ColumnBinding RunConfig::binding() const {
  ColumnBinding b;
  b.x = x_column;
  b.y = y_column;
  b.response = response;
  b.covariates = svc;
  b.covariates.insert(b.covariates.end(), fixed_only.begin(), fixed_only.end());
  b.labels = groups;
  return b;
}

void RunConfig::validate() const {
  require(!response.empty(), ErrorCode::invalid_parameter, "no response column given");
  require(knots >= 2, ErrorCode::invalid_parameter, "knot count must be >= 2");
  require(max_pairs >= 1, ErrorCode::invalid_parameter, "max eigenpairs must be >= 1");
  require(block_rows >= 1, ErrorCode::invalid_parameter, "block target must be >= 1");
  require(workers >= 1, ErrorCode::invalid_parameter, "workers must be >= 1");
  require(reservoir >= 2, ErrorCode::invalid_parameter, "reservoir must hold >= 2 rows");
  std::vector<std::string> all = binding().covariates;
  std::sort(all.begin(), all.end());
  require(std::adjacent_find(all.begin(), all.end()) == all.end(),
          ErrorCode::invalid_parameter, "a covariate is listed twice");
}

namespace {

ModelSpec build_spec(const RunConfig &config, Index basis_width,
                     const std::vector<GroupIndex> &label_index,
                     std::vector<GroupIndex> &term_groups) {
  const ColumnBinding b = config.binding();
  ModelSpec spec;
  spec.intercept = config.intercept;
  spec.covariate_names = b.covariates;
  spec.label_names = b.labels;
  for (Index c = 0; c < static_cast<Index>(b.covariates.size()); ++c) {
    spec.fixed.push_back(c);
  }
  term_groups.clear();
  for (Index c = 0; c < static_cast<Index>(config.svc.size()); ++c) {
    TermSpec t;
    t.kind = TermKind::svc;
    t.name = "svc_" + config.svc[c];
    t.covariate = c;
    t.width = basis_width;
    spec.terms.push_back(t);
    term_groups.emplace_back();
  }
  if (config.residual) {
    TermSpec t;
    t.kind = TermKind::residual_spatial;
    t.name = "spatial";
    t.width = basis_width;
    spec.terms.push_back(t);
    term_groups.emplace_back();
  }
  for (Index l = 0; l < static_cast<Index>(config.groups.size()); ++l) {
    TermSpec t;
    t.kind = TermKind::group;
    t.name = "group_" + config.groups[l];
    t.label_column = l;
    t.width = label_index[l].size();
    spec.terms.push_back(t);
    term_groups.push_back(label_index[l]);
  }
  spec.validate();
  return spec;
}

} // namespace

FitReport fit_source(const RunConfig &config, BlockSource &source) {
  config.validate();
  FitReport report;
  reset_basis_memory_stats();

  // Pass 1: row count, label sets, site reservoir, non-finite check.
  auto t0 = Clock::now();
  std::vector<GroupIndex> label_index(config.groups.size());
  std::vector<double> reservoir;
  reservoir.reserve(2 * std::min<std::size_t>(config.reservoir, 1 << 20));
  std::mt19937_64 rng(config.seed);
  std::size_t rows = 0;
  std::size_t non_finite = 0;
  source.rewind();
  DataBlock block;
  while (source.next(block, config.block_rows)) {
    non_finite += count_non_finite(block);
    for (std::size_t l = 0; l < label_index.size(); ++l) {
      for (const auto &label : block.labels[l]) {
        label_index[l].insert(label);
      }
      label_index[l].finalize();
    }
    for (Index i = 0; i < block.rows(); ++i, ++rows) {
      if (rows < config.reservoir) {
        reservoir.push_back(block.coords(i, 0));
        reservoir.push_back(block.coords(i, 1));
      } else {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, rows)(rng);
        if (j < config.reservoir) {
          reservoir[2 * j] = block.coords(i, 0);
          reservoir[2 * j + 1] = block.coords(i, 1);
        }
      }
    }
  }
  require(rows > 0, ErrorCode::empty_data, "the input has no data rows");
  require(non_finite == 0, ErrorCode::invalid_input,
          std::to_string(non_finite) + " non-finite numeric values in the input");
  report.rows = rows;
  report.times.scan = seconds_since(t0);

  // Knots, range and eigenpairs from the reservoir sample.
  t0 = Clock::now();
  const auto sample_rows = static_cast<Index>(reservoir.size() / 2);
  const Coords sample = Eigen::Map<const Coords>(reservoir.data(), sample_rows, 2);
  const Index l = std::min<Index>(config.knots, sample_rows);
  const KnotSet knots = select_knots(sample, l, config.seed, rows);
  BasisFactory factory = make_factory(knots, rows, config.scaling, config.max_pairs);
  const double mean_kernel = mean_off_diagonal_kernel(sample, knots.range, 2000);
  report.mc_scale = rows > 1 && mean_kernel > 0.0
                        ? 1.0 / (static_cast<double>(rows - 1) * mean_kernel)
                        : std::numeric_limits<double>::quiet_NaN();
  report.times.basis = seconds_since(t0);

  std::vector<GroupIndex> term_groups;
  const ModelSpec spec = build_spec(config, factory.size(), label_index, term_groups);
  std::vector<Index> widths;
  for (const auto &t : spec.terms) {
    widths.push_back(t.width);
  }

  // Pass 2: block h goes to worker h mod W; worker stores merge in worker order.
  t0 = Clock::now();
  const auto workers = static_cast<std::size_t>(config.workers);
  std::vector<InnerProductStore> stores(workers, init_store(spec.fixed_count(), widths));
  source.rewind();
  std::vector<DataBlock> batch(workers);
  std::size_t blocks = 0;
  bool more = true;
  auto work = [&](std::size_t w) {
    const DataBlock &b = batch[w];
    if (b.rows() == 0) {
      return;
    }
    const Eigen::MatrixXd x = spec.design(b);
    const std::vector<TermBlock> a = build_term_blocks(spec.terms, factory, b, term_groups);
    accumulate_block(stores[w], x, b.y, a);
  };
  while (more) {
    std::size_t filled = 0;
    for (; filled < workers; ++filled) {
      if (!source.next(batch[filled], config.block_rows)) {
        more = false;
        break;
      }
    }
    for (std::size_t w = filled; w < workers; ++w) {
      batch[w] = DataBlock();
    }
    blocks += filled;
    if (filled <= 1) {
      if (filled == 1) {
        work(0);
      }
    } else {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(filled);
      for (std::size_t w = 0; w < filled; ++w) {
        threads.emplace_back([&, w] {
          try {
            work(w);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto &t : threads) {
        t.join();
      }
      for (auto &e : errors) {
        if (e) {
          std::rethrow_exception(e);
        }
      }
    }
    for (auto &b : batch) {
      b = DataBlock();
    }
  }
  InnerProductStore store = std::move(stores[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    merge_into(store, stores[w]);
  }
  stores.clear();
  finalize_store(store, rows);
  report.blocks = blocks;
  report.times.accumulate = seconds_since(t0);

  // Estimation.
  t0 = Clock::now();
  FittedModel &model = report.model;
  model.fit = fit(spec, store, factory.lambda_hat(), config.controls);
  model.spec = spec;
  model.groups = std::move(term_groups);
  model.response_name = config.response;
  model.x_name = config.x_column;
  model.y_name = config.y_column;
  model.factory = std::move(factory);
  report.times.estimate = seconds_since(t0);
  report.store = std::move(store);

  const Eigen::VectorXd &lh = model.factory.lambda_hat();
  for (std::size_t p = 0; p < spec.terms.size(); ++p) {
    report.expected_mc.push_back(
        spec.terms[p].spatial()
            ? expected_mc(std::span<const double>(lh.data(), static_cast<std::size_t>(lh.size())),
                          model.fit.theta.terms[p].alpha, report.mc_scale)
            : std::numeric_limits<double>::quiet_NaN());
  }
  report.memory = basis_memory_stats();
  report.memory_bound = std::min(config.block_rows, rows) *
                        static_cast<std::size_t>(model.factory.size());
  return report;
}

void recover_pass(const FittedModel &model, BlockSource &source,
                  std::size_t block_rows, const EffectSink &sink) {
  source.rewind();
  DataBlock block;
  while (source.next(block, block_rows)) {
    sink(block, predict_response(model, block));
  }
}

std::vector<std::string> effect_columns(const FittedModel &model, bool with_response) {
  std::vector<std::string> cols{"row"};
  if (with_response) {
    cols.push_back(model.response_name);
  }
  cols.emplace_back("fitted");
  if (with_response) {
    cols.emplace_back("residual");
  }
  bool any_group = false;
  for (const auto &t : model.spec.terms) {
    cols.push_back(t.name);
    cols.push_back("se_" + t.name);
    any_group = any_group || t.kind == TermKind::group;
  }
  if (!with_response && any_group) {
    cols.emplace_back("unseen_group");
  }
  return cols;
}

namespace {

void write_header(std::ostream &out, const std::vector<std::string> &cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << (i ? "," : "") << cols[i];
  }
  out << '\n';
}

void write_rows(std::ostream &out, const FittedModel &model, const DataBlock &block,
                const Prediction &pred, bool with_response) {
  const bool any_group =
      std::any_of(model.spec.terms.begin(), model.spec.terms.end(),
                  [](const TermSpec &t) { return t.kind == TermKind::group; });
  std::string line;
  for (Index i = 0; i < block.rows(); ++i) {
    line.clear();
    line += std::to_string(block.first_row + static_cast<std::size_t>(i));
    if (with_response) {
      line += ',';
      append_number(line, block.y(i));
    }
    line += ',';
    append_number(line, pred.fitted(i));
    if (with_response) {
      line += ',';
      append_number(line, block.y(i) - pred.fitted(i));
    }
    for (Index p = 0; p < pred.effects.cols(); ++p) {
      line += ',';
      append_number(line, pred.effects(i, p));
      line += ',';
      append_number(line, pred.se(i, p));
    }
    if (!with_response && any_group) {
      line += pred.unseen_group[i] ? ",1" : ",0";
    }
    line += '\n';
    out << line;
  }
}

const char *range_source_name(RangeSource s) {
  return s == RangeSource::sites ? "sites" : "knots";
}

} // namespace

std::string summary_json(const RunConfig &config, const FitReport &report) {
  using nlohmann::json;
  const FittedModel &m = report.model;
  const FitResult &f = m.fit;
  json j;
  j["config"] = {{"input", config.input},
                 {"output_dir", config.output_dir},
                 {"delimiter", std::string(1, config.delimiter)},
                 {"x", config.x_column},
                 {"y", config.y_column},
                 {"response", config.response},
                 {"svc", config.svc},
                 {"fixed", config.fixed_only},
                 {"groups", config.groups},
                 {"residual", config.residual},
                 {"intercept", config.intercept},
                 {"knots", config.knots},
                 {"max_pairs", config.max_pairs},
                 {"block_rows", config.block_rows},
                 {"workers", config.workers},
                 {"seed", config.seed},
                 {"reservoir", config.reservoir},
                 {"scaling", to_string(config.scaling)},
                 {"log_tau2_min", config.controls.log_tau2_min},
                 {"log_tau2_max", config.controls.log_tau2_max},
                 {"alpha_min", config.controls.alpha_min},
                 {"alpha_max", config.controls.alpha_max},
                 {"optimizer_tolerance", config.controls.optimizer_tolerance},
                 {"max_evaluations", config.controls.max_evaluations},
                 {"outer_tolerance", config.controls.outer_tolerance},
                 {"max_sweeps", config.controls.max_sweeps}};
  j["data"] = {{"rows", report.rows}, {"blocks", report.blocks}};
  j["basis"] = {{"knots", m.factory.knots().size()},
                {"eigenpairs", m.factory.size()},
                {"range", m.factory.knots().range},
                {"range_source", range_source_name(m.factory.knots().range_source)},
                {"lambda_hat_max", m.factory.lambda_hat().size() ? m.factory.lambda_hat().maxCoeff() : 0.0},
                {"lambda_hat_min", m.factory.lambda_hat().size() ? m.factory.lambda_hat().minCoeff() : 0.0},
                {"mc_scale", report.mc_scale}};
  json fixed = json::array();
  const auto names = m.spec.fixed_names();
  for (Index k = 0; k < f.b.size(); ++k) {
    fixed.push_back({{"name", names[k]},
                     {"estimate", f.b(k)},
                     {"se", std::sqrt(std::max(f.fixed_covariance(k, k), 0.0))}});
  }
  json terms = json::array();
  for (std::size_t p = 0; p < m.spec.terms.size(); ++p) {
    const TermSpec &t = m.spec.terms[p];
    json jt = {{"name", t.name},
               {"kind", to_string(t.kind)},
               {"width", t.width},
               {"tau", f.theta.terms[p].tau},
               {"tau2", f.theta.terms[p].tau * f.theta.terms[p].tau},
               {"dropped", static_cast<bool>(f.dropped[p])}};
    if (t.spatial()) {
      jt["alpha"] = f.theta.terms[p].alpha;
      jt["expected_mc"] = report.expected_mc[p];
    }
    terms.push_back(std::move(jt));
  }
  j["fit"] = {{"sigma2", f.sigma2},
              {"loglik", f.loglik},
              {"sweeps", f.sweeps},
              {"converged", f.converged},
              {"trace", f.trace},
              {"fixed", fixed},
              {"terms", terms}};
  j["seconds"] = {{"scan", report.times.scan},
                  {"basis", report.times.basis},
                  {"accumulate", report.times.accumulate},
                  {"estimate", report.times.estimate},
                  {"recover", report.times.recover}};
  j["memory"] = {{"largest_basis_entries", report.memory.largest_entries},
                 {"largest_basis_rows", report.memory.largest_rows},
                 {"peak_live_basis_entries", report.memory.peak_live_entries},
                 {"basis_allocations", report.memory.allocations},
                 {"basis_entry_bound", report.memory_bound},
                 {"store_entries", report.store.order() * report.store.order()}};
  return j.dump(2);
}

FitReport run_fit(const RunConfig &config) {
  require(!config.output_dir.empty(), ErrorCode::invalid_parameter, "no output directory given");
  std::filesystem::create_directories(config.output_dir);
  const std::filesystem::path dir(config.output_dir);
  CsvSource source(config.input, config.binding(), config.delimiter);
  FitReport report = fit_source(config, source);
  save_model((dir / "model.json").string(), report.model);

  const auto t0 = Clock::now();
  std::ofstream effects(dir / "effects.csv");
  require(static_cast<bool>(effects), ErrorCode::invalid_input, "cannot write effects table");
  write_header(effects, effect_columns(report.model, true));
  recover_pass(report.model, source, config.block_rows,
               [&](const DataBlock &b, const Prediction &p) {
                 write_rows(effects, report.model, b, p, true);
               });
  effects.close();
  report.times.recover = seconds_since(t0);
  const BasisMemoryStats after = basis_memory_stats();
  report.memory = after;

  std::ofstream summary(dir / "summary.json");
  summary << summary_json(config, report) << '\n';
  require(static_cast<bool>(summary), ErrorCode::invalid_input, "cannot write summary");
  return report;
}

std::size_t run_predict(const std::string &model_path, const std::string &input,
                        const std::string &output, std::size_t block_rows,
                        char delimiter) {
  require(block_rows >= 1, ErrorCode::invalid_parameter, "block target must be >= 1");
  const FittedModel model = load_model(model_path);
  ColumnBinding binding;
  binding.x = model.x_name;
  binding.y = model.y_name;
  binding.covariates = model.spec.covariate_names;

  // Label columns absent from the new table count as unseen groups.
  CsvSource probe(input, binding, delimiter);
  std::vector<bool> present;
  for (const auto &name : model.spec.label_names) {
    const bool has = std::find(probe.header().begin(), probe.header().end(), name) !=
                     probe.header().end();
    present.push_back(has);
    if (has) {
      binding.labels.push_back(name);
    }
  }
  CsvSource source(input, binding, delimiter);

  std::ofstream out(output);
  require(static_cast<bool>(out), ErrorCode::invalid_input, "cannot write '" + output + "'");
  write_header(out, effect_columns(model, false));
  std::size_t rows = 0;
  DataBlock block;
  while (source.next(block, block_rows)) {
    const std::size_t bad = count_non_finite(block);
    require(bad == 0, ErrorCode::invalid_input,
            std::to_string(bad) + " non-finite numeric values in '" + input + "'");
    std::vector<std::vector<std::string>> labels;
    std::size_t next_col = 0;
    for (bool has : present) {
      labels.push_back(has ? std::move(block.labels[next_col++]) : std::vector<std::string>{});
    }
    block.labels = std::move(labels);
    write_rows(out, model, block, predict_response(model, block), false);
    rows += static_cast<std::size_t>(block.rows());
  }
  require(static_cast<bool>(out), ErrorCode::invalid_input, "failed writing '" + output + "'");
  return rows;
}

void inspect_model(const std::string &model_path, std::ostream &out) {
  const FittedModel m = load_model(model_path);
  const FitResult &f = m.fit;
  out << "model file      " << model_path << " (format " << kModelFormatVersion << ")\n";
  out << "rows            " << f.n << "\n";
  out << "response        " << m.response_name << "  coords (" << m.x_name << ", " << m.y_name << ")\n";
  out << "knots           " << m.factory.knots().size() << "  eigenpairs " << m.factory.size()
      << "  range " << m.factory.knots().range << " (" << range_source_name(m.factory.knots().range_source)
      << ")  scaling " << to_string(m.factory.scaling_mode()) << "\n";
  out << "sigma2          " << f.sigma2 << "\n";
  out << "loglik_R        " << f.loglik << "  sweeps " << f.sweeps
      << (f.converged ? "  converged" : "  not converged") << "\n";
  const auto names = m.spec.fixed_names();
  out << "fixed effects\n";
  for (Index k = 0; k < f.b.size(); ++k) {
    out << "  " << names[k] << "  " << f.b(k) << "  (se "
        << std::sqrt(std::max(f.fixed_covariance(k, k), 0.0)) << ")\n";
  }
  out << "terms\n";
  for (std::size_t p = 0; p < m.spec.terms.size(); ++p) {
    const TermSpec &t = m.spec.terms[p];
    out << "  " << t.name << "  [" << to_string(t.kind) << ", width " << t.width << "]  tau2 "
        << f.theta.terms[p].tau * f.theta.terms[p].tau;
    if (t.spatial()) {
      out << "  alpha " << f.theta.terms[p].alpha;
    }
    if (f.dropped[p]) {
      out << "  (dropped)";
    }
    out << "\n";
  }
}

} // namespace mesa
