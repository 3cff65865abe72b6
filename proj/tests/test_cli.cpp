#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <sys/wait.h>

#include "helpers.hpp"
#include "mesa/pipeline.hpp"
#include "mesa/sim.hpp"

using namespace mesa;
using helpers::TempDir;

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  Eigen::VectorXd column(const std::string &name) const {
    const auto c = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    REQUIRE(c < header.size());
    Eigen::VectorXd v(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      v(static_cast<Index>(i)) = rows[i][c];
    }
    return v;
  }
};

std::vector<std::string> fields(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    out.push_back(f);
  }
  return out;
}

Table read_table(const std::string &path) {
  std::ifstream in(path);
  REQUIRE(in);
  Table t;
  std::string line;
  std::getline(in, line);
  t.header = fields(line);
  while (std::getline(in, line)) {
    std::vector<double> row;
    for (const auto &f : fields(line)) {
      row.push_back(std::stod(f));
    }
    t.rows.push_back(row);
  }
  return t;
}

std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status;
  std::string err;
};

Run mesa_run(const TempDir &dir, const std::string &args) {
  const std::string err = dir.file("stderr.txt");
  const std::string cmd = std::string(MESA_BINARY) + " " + args + " > " + dir.file("stdout.txt") + " 2> " + err;
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

void write_csv(const std::string &path, const helpers::Scenario &s) {
  std::ofstream out(path);
  out.precision(17);
  out << "x,y,x1,x2,group,resp\n";
  for (Index i = 0; i < s.table.rows(); ++i) {
    out << s.table.coords(i, 0) << ',' << s.table.coords(i, 1) << ',' << s.table.covariates(i, 0) << ','
        << s.table.covariates(i, 1) << ',' << s.table.labels[0][static_cast<std::size_t>(i)] << ','
        << s.table.y(i) << '\n';
  }
}

helpers::Scenario scenario(Index n = 300) {
  helpers::ScenarioOptions opt;
  opt.n = n;
  opt.covariates = 2;
  opt.group = true;
  opt.seed = 21;
  return helpers::make_scenario(opt);
}

const std::string kFit = "fit --response resp --svc x1 --fixed x2 --group group --knots 20 ";

} // namespace

TEST_CASE("fit writes model, effects and summary") {
  TempDir dir("cli_fit");
  const helpers::Scenario s = scenario();
  write_csv(dir.file("data.csv"), s);
  const Run r = mesa_run(dir, kFit + "-i " + dir.file("data.csv") + " -o " + dir.file("out"));
  REQUIRE(r.status == 0);

  const Table effects = read_table(dir.file("out/effects.csv"));
  CHECK(effects.rows.size() == 300);
  for (const char *col : {"row", "resp", "fitted", "residual", "svc_x1", "se_svc_x1", "spatial", "group_group"}) {
    CHECK(std::find(effects.header.begin(), effects.header.end(), col) != effects.header.end());
  }
  CHECK(oracle::max_rel_diff(effects.column("resp"), s.table.y) < 1e-14);
  CHECK((effects.column("resp") - effects.column("fitted") - effects.column("residual")).cwiseAbs().maxCoeff() <
        1e-10);

  nlohmann::json summary;
  std::ifstream(dir.file("out/summary.json")) >> summary;
  CHECK(summary["data"]["rows"] == 300);
  CHECK(summary["fit"]["terms"].size() == 3);
  CHECK(summary["memory"]["largest_basis_entries"].get<std::size_t>() <=
        summary["memory"]["basis_entry_bound"].get<std::size_t>());

  // Predicting the training table reproduces the recovered effects.
  REQUIRE(mesa_run(dir, "predict -m " + dir.file("out/model.json") + " -i " + dir.file("data.csv") + " -o " +
                            dir.file("pred.csv") + " --block-rows 77")
              .status == 0);
  const Table pred = read_table(dir.file("pred.csv"));
  CHECK(pred.rows.size() == 300);
  for (const char *col : {"fitted", "svc_x1", "se_svc_x1", "spatial", "se_spatial", "group_group"}) {
    CHECK(oracle::max_rel_diff(pred.column(col), effects.column(col)) < 1e-10);
  }
  CHECK(pred.column("unseen_group").isZero(0.0));

  CHECK(mesa_run(dir, "inspect " + dir.file("out/model.json")).status == 0);
  const std::string text = slurp(dir.file("stdout.txt"));
  CHECK(text.find("svc_x1") != std::string::npos);
  CHECK(text.find("sigma2") != std::string::npos);
}

TEST_CASE("block size does not change the estimate") {
  TempDir dir("cli_blocks");
  write_csv(dir.file("data.csv"), scenario(400));
  const std::string base = kFit + "-i " + dir.file("data.csv") + " ";
  REQUIRE(mesa_run(dir, base + "-o " + dir.file("a") + " --block-rows 10000").status == 0);
  REQUIRE(mesa_run(dir, base + "-o " + dir.file("b") + " --block-rows 37").status == 0);
  nlohmann::json a, b;
  std::ifstream(dir.file("a/summary.json")) >> a;
  std::ifstream(dir.file("b/summary.json")) >> b;
  CHECK(b["data"]["blocks"] == 11);
  CHECK(std::abs(a["fit"]["loglik"].get<double>() - b["fit"]["loglik"].get<double>()) < 1e-6);
  for (std::size_t p = 0; p < 3; ++p) {
    const auto &ta = a["fit"]["terms"][p];
    const auto &tb = b["fit"]["terms"][p];
    CHECK(std::abs(std::log(ta["tau2"].get<double>()) - std::log(tb["tau2"].get<double>())) < 1e-6);
    if (ta.contains("alpha")) {
      CHECK(std::abs(ta["alpha"].get<double>() - tb["alpha"].get<double>()) < 1e-6);
    }
  }
}

TEST_CASE("fixed-effects-only fit is ordinary least squares") {
  TempDir dir("cli_ols");
  const helpers::Scenario s = scenario();
  write_csv(dir.file("data.csv"), s);
  REQUIRE(mesa_run(dir, "fit --response resp --fixed x1 x2 --no-residual -i " + dir.file("data.csv") + " -o " +
                            dir.file("out"))
              .status == 0);
  const Eigen::MatrixXd x = helpers::dense_x(s);
  const Eigen::VectorXd b = x.colPivHouseholderQr().solve(s.table.y);
  nlohmann::json j;
  std::ifstream(dir.file("out/summary.json")) >> j;
  for (Index k = 0; k < 3; ++k) {
    CHECK(std::abs(j["fit"]["fixed"][static_cast<std::size_t>(k)]["estimate"].get<double>() - b(k)) < 1e-8);
  }
  const double rss = (s.table.y - x * b).squaredNorm();
  CHECK(std::abs(j["fit"]["sigma2"].get<double>() - rss / 297.0) < 1e-8 * rss);
}

TEST_CASE("exit codes and input errors") {
  TempDir dir("cli_errors");
  write_csv(dir.file("data.csv"), scenario(60));
  const std::string in = " -i " + dir.file("data.csv") + " -o " + dir.file("out");

  CHECK(mesa_run(dir, "").status == 1);
  CHECK(mesa_run(dir, "fit --bogus").status == 1);
  CHECK(mesa_run(dir, "fit --response resp --knots 0" + in).status == 1);
  CHECK(mesa_run(dir, "fit --response resp --svc nope" + in).status == 2);
  CHECK(mesa_run(dir, "fit --response resp -i " + dir.file("missing.csv") + " -o " + dir.file("out")).status == 2);

  {
    std::ofstream bad(dir.file("bad.csv"));
    bad << "x,y,x1,resp\n0.1,0.2,1,3\n0.3,0.4,oops,5\n";
  }
  Run r = mesa_run(dir, "fit --response resp --fixed x1 --no-residual -i " + dir.file("bad.csv") + " -o " +
                            dir.file("out"));
  CHECK(r.status == 2);
  CHECK(r.err.find("line 3") != std::string::npos);

  {
    std::ofstream nan(dir.file("nan.csv"));
    nan << "x,y,x1,resp\n0.1,0.2,1,3\n0.3,0.4,nan,5\n0.5,0.6,inf,nan\n0.7,0.1,2,1\n";
  }
  r = mesa_run(dir, "fit --response resp --fixed x1 --no-residual -i " + dir.file("nan.csv") + " -o " +
                        dir.file("out"));
  CHECK(r.status == 2);
  CHECK(r.err.find("3 non-finite") != std::string::npos);

  // The response equals the fixed design exactly: zero residual variance.
  {
    std::ofstream exact(dir.file("exact.csv"));
    exact << "x,y,x1,resp\n";
    for (int i = 0; i < 20; ++i) {
      exact << 0.05 * i << ',' << 0.3 * (i % 4) << ',' << i << ',' << 2 + 3 * i << '\n';
    }
  }
  CHECK(mesa_run(dir, "fit --response resp --fixed x1 --no-residual -i " + dir.file("exact.csv") + " -o " +
                          dir.file("out"))
            .status == 3);

  CHECK(mesa_run(dir, "inspect " + dir.file("data.csv")).status == 2);
}

TEST_CASE("prediction at new sites and empty tables") {
  TempDir dir("cli_predict");
  write_csv(dir.file("data.csv"), scenario(200));
  REQUIRE(mesa_run(dir, kFit + "-i " + dir.file("data.csv") + " -o " + dir.file("out")).status == 0);
  const std::string model = dir.file("out/model.json");
  {
    std::ofstream out(dir.file("new.csv"));
    out << "x,y,x1,x2,group\n0.5,0.5,1,1,g0\n3,3,0,0,zz\n";
  }
  REQUIRE(mesa_run(dir, "predict -m " + model + " -i " + dir.file("new.csv") + " -o " + dir.file("p.csv")).status ==
          0);
  const Table p = read_table(dir.file("p.csv"));
  REQUIRE(p.rows.size() == 2);
  CHECK(p.column("unseen_group")(0) == 0.0);
  CHECK(p.column("unseen_group")(1) == 1.0);
  CHECK(p.column("group_group")(1) == 0.0);
  CHECK(p.column("fitted").allFinite());

  {
    std::ofstream out(dir.file("empty.csv"));
    out << "x,y,x1,x2,group\n";
  }
  REQUIRE(mesa_run(dir, "predict -m " + model + " -i " + dir.file("empty.csv") + " -o " + dir.file("e.csv"))
              .status == 0);
  CHECK(read_table(dir.file("e.csv")).rows.empty());

  {
    std::ofstream out(dir.file("nocov.csv"));
    out << "x,y,x1,group\n0.5,0.5,1,g0\n";
  }
  CHECK(mesa_run(dir, "predict -m " + model + " -i " + dir.file("nocov.csv") + " -o " + dir.file("f.csv")).status ==
        2);
}

TEST_CASE("simulate is reproducible") {
  TempDir dir("cli_sim");
  const std::string args =
      "simulate --n 120 --sx 0.3 --tau-g2-ratio 0 1 --knots 15 --replicates 2 --seed 4 -o ";
  REQUIRE(mesa_run(dir, args + dir.file("a")).status == 0);
  REQUIRE(mesa_run(dir, args + dir.file("b")).status == 0);
  const std::string a = slurp(dir.file("a/summary.csv"));
  CHECK(a == slurp(dir.file("b/summary.csv")));
  CHECK(slurp(dir.file("a/seeds.csv")) == slurp(dir.file("b/seeds.csv")));
  CHECK(std::count(a.begin(), a.end(), '\n') == 1 + 2 * 8);
  CHECK(mesa_run(dir, "simulate --n 30 --replicates 1 -o " + dir.file("c")).status == 1);
}

TEST_CASE("CLI effects on simulated data match the in-process fit bitwise") {
  TempDir dir("cli_sim_fit");
  SimConfig c;
  c.n = 240;
  c.n_svc_large = 1;
  c.n_svc_small = 1;
  c.knots = 20;
  c.tau_g2_ratio = 1.0;
  c.seed = 8;
  const SimDataset d = generate_dataset(c);
  const DataBlock table = d.table();
  {
    std::ofstream out(dir.file("sim.csv"));
    out << "x,y,x1,x2,group,resp\n";
    char buf[512];
    for (Index i = 0; i < table.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%s,%.17g\n", table.coords(i, 0), table.coords(i, 1),
                    table.covariates(i, 0), table.covariates(i, 1),
                    table.labels[0][static_cast<std::size_t>(i)].c_str(), table.y(i));
      out << buf;
    }
  }
  REQUIRE(mesa_run(dir, "fit --response resp --svc x1 x2 --group group --knots 20 --seed 8 -i " +
                            dir.file("sim.csv") + " -o " + dir.file("out"))
              .status == 0);

  RunConfig cfg;
  cfg.response = "resp";
  cfg.svc = {"x1", "x2"};
  cfg.groups = {"group"};
  cfg.knots = 20;
  cfg.seed = 8;
  MemorySource source(table);
  const FittedModel model = fit_source(cfg, source).model;
  const Table effects = read_table(dir.file("out/effects.csv"));
  for (Index p = 0; p < static_cast<Index>(model.spec.terms.size()); ++p) {
    const std::string &name = model.spec.terms[static_cast<std::size_t>(p)].name;
    const EffectSurface s = recover_effects(model, p, table);
    CHECK(effects.column(name) == s.value);
    CHECK(effects.column("se_" + name) == s.se);
  }
}
