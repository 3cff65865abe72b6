#pragma once

// Small synthetic problems shared by the unit tests, plus the glue that
// turns one into the dense reference model of oracle.hpp.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mesa/accumulate.hpp"
#include "mesa/error.hpp"
#include "mesa/model.hpp"
#include "mesa/reml.hpp"
#include "mesa/source.hpp"
#include "oracle.hpp"

namespace helpers {

using namespace mesa;

struct ScenarioOptions {
  Index n = 200;
  int covariates = 1;
  int svc = 1; // first `svc` covariates get an SVC term
  bool residual = true;
  bool group = false;
  Index group_count = 8;
  Index knots = 15;
  int max_pairs = kDefaultMaxEigenpairs;
  std::uint64_t seed = 1;
  double noise = 0.5;
  double signal = 1.0;
};

struct Scenario {
  DataBlock table;
  ModelSpec spec;
  BasisFactory factory;
  std::vector<GroupIndex> groups; // per term
};

inline Scenario make_scenario(const ScenarioOptions &o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> z;
  Scenario s;
  s.table.coords = oracle::random_sites(o.n, rng);
  s.table.covariates = oracle::random_matrix(o.n, o.covariates, rng);
  if (o.group) {
    std::uniform_int_distribution<Index> pick(0, o.group_count - 1);
    s.table.labels.emplace_back();
    for (Index i = 0; i < o.n; ++i) {
      s.table.labels[0].push_back("g" + std::to_string(i < o.group_count ? i : pick(rng)));
    }
  }

  s.spec.intercept = true;
  for (int c = 0; c < o.covariates; ++c) {
    s.spec.covariate_names.push_back("x" + std::to_string(c + 1));
    s.spec.fixed.push_back(c);
  }
  if (o.group) {
    s.spec.label_names.push_back("group");
  }

  s.factory = make_factory(select_knots(s.table.coords, o.knots, o.seed), static_cast<std::size_t>(o.n),
                           ScalingMode::as_printed, o.max_pairs);
  const Index width = s.factory.size();
  for (int c = 0; c < o.svc; ++c) {
    TermSpec t;
    t.kind = TermKind::svc;
    t.name = "svc_x" + std::to_string(c + 1);
    t.covariate = c;
    t.width = width;
    s.spec.terms.push_back(t);
    s.groups.emplace_back();
  }
  if (o.residual) {
    TermSpec t;
    t.kind = TermKind::residual_spatial;
    t.name = "spatial";
    t.width = width;
    s.spec.terms.push_back(t);
    s.groups.emplace_back();
  }
  if (o.group) {
    GroupIndex g(s.table.labels[0]);
    TermSpec t;
    t.kind = TermKind::group;
    t.name = "group";
    t.label_column = 0;
    t.width = g.size();
    s.spec.terms.push_back(t);
    s.groups.push_back(g);
  }

  // y = 1 + sum x_c + smooth surfaces + group shifts + noise.
  const Eigen::MatrixXd e = oracle::dense_nystrom(s.factory, s.table.coords);
  const Eigen::VectorXd lam = s.factory.lambda_hat();
  auto surface = [&](double power) {
    Eigen::VectorXd g(width);
    for (Index l = 0; l < width; ++l) {
      g(l) = std::pow(lam(l), power) * z(rng);
    }
    Eigen::VectorXd w = e * g;
    const double sd = std::sqrt((w.array() - w.mean()).square().mean());
    return Eigen::VectorXd(sd > 0 ? Eigen::VectorXd(w / sd) : w);
  };
  Eigen::VectorXd y = Eigen::VectorXd::Ones(o.n);
  for (int c = 0; c < o.covariates; ++c) {
    Eigen::VectorXd beta = Eigen::VectorXd::Ones(o.n);
    if (c < o.svc) {
      beta += o.signal * surface(1.0);
    }
    y.array() += beta.array() * s.table.covariates.col(c).array();
  }
  if (o.residual) {
    y += o.signal * surface(0.5);
  }
  if (o.group) {
    std::vector<double> shift(static_cast<std::size_t>(o.group_count));
    for (auto &v : shift) {
      v = o.signal * z(rng);
    }
    for (Index i = 0; i < o.n; ++i) {
      y(i) += shift[static_cast<std::size_t>(std::stoi(s.table.labels[0][i].substr(1)))];
    }
  }
  for (Index i = 0; i < o.n; ++i) {
    y(i) += o.noise * z(rng);
  }
  s.table.y = y;
  return s;
}

/// Store accumulated over `h` contiguous, nearly equal blocks.
inline InnerProductStore store_for(const Scenario &s, Index h) {
  InnerProductStore store = init_store(s.spec.fixed_count(), [&] {
    std::vector<Index> w;
    for (const auto &t : s.spec.terms) {
      w.push_back(t.width);
    }
    return w;
  }());
  const auto n = static_cast<std::size_t>(s.table.rows());
  const auto hh = static_cast<std::size_t>(h);
  for (std::size_t b = 0; b < hh; ++b) {
    const std::size_t begin = n * b / hh;
    const std::size_t end = n * (b + 1) / hh;
    const DataBlock block = slice_rows(s.table, begin, end - begin);
    accumulate_block(store, s.spec.design(block), block.y,
                     build_term_blocks(s.spec.terms, s.factory, block, s.groups));
  }
  finalize_store(store, n);
  return store;
}

inline RemlProblem problem_for(const Scenario &s, const InnerProductStore &store) {
  return RemlProblem{&store, s.spec.terms, s.factory.lambda_hat()};
}

/// Full design X built without the library.
inline Eigen::MatrixXd dense_x(const Scenario &s) {
  Eigen::MatrixXd x(s.table.rows(), 1 + s.table.covariates.cols());
  x.col(0).setOnes();
  x.rightCols(s.table.covariates.cols()) = s.table.covariates;
  return x;
}

/// Full A_p built without the library.
inline Eigen::MatrixXd dense_a(const Scenario &s, const TermSpec &t) {
  if (t.kind == TermKind::group) {
    const auto &labels = s.table.labels[static_cast<std::size_t>(t.label_column)];
    std::set<std::string> distinct(labels.begin(), labels.end());
    std::vector<std::string> sorted(distinct.begin(), distinct.end());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s.table.rows(), static_cast<Index>(sorted.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto col = std::lower_bound(sorted.begin(), sorted.end(), labels[i]) - sorted.begin();
      a(static_cast<Index>(i), col) = 1.0;
    }
    return a;
  }
  Eigen::MatrixXd e = oracle::dense_nystrom(s.factory, s.table.coords);
  if (t.kind == TermKind::svc) {
    e = s.table.covariates.col(t.covariate).asDiagonal() * e;
  }
  return e;
}

inline oracle::DenseModel dense_model(const Scenario &s, const VarianceParams &params) {
  oracle::DenseModel m;
  m.x = dense_x(s);
  m.y = s.table.y;
  const Eigen::VectorXd &lam = s.factory.lambda_hat();
  for (std::size_t p = 0; p < s.spec.terms.size(); ++p) {
    const TermSpec &t = s.spec.terms[p];
    m.a.push_back(dense_a(s, t));
    const double ratio = params.terms[p].tau / std::sqrt(params.sigma2);
    Eigen::VectorXd v(t.width);
    for (Index l = 0; l < t.width; ++l) {
      v(l) = t.kind == TermKind::group ? ratio : ratio * std::pow(lam(l), params.terms[p].alpha);
    }
    m.v.push_back(v);
  }
  return m;
}

inline VarianceParams random_params(const Scenario &s, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> tau(0.05, 2.0);
  std::uniform_real_distribution<double> alpha(-1.0, 2.0);
  VarianceParams v;
  for (const auto &t : s.spec.terms) {
    v.terms.push_back({tau(rng), t.spatial() ? alpha(rng) : 0.0});
  }
  return v;
}

/// Temporary directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("mesa_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string &name) const { return (path / name).string(); }
};

template <typename F> ErrorCode code_of(F &&f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  throw std::runtime_error("expected a mesa::Error");
}

} // namespace helpers
