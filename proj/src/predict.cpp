#include "mesa/predict.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mesa/error.hpp"

namespace mesa {

RowMatrix nystrom_extend(const BasisFactory &factory, const Coords &coords) {
  return factory.nystrom_block(coords);
}

namespace {

void check_term(const FittedModel &model, Index term) {
  require(term >= 0 && term < static_cast<Index>(model.spec.terms.size()),
          ErrorCode::unknown_term,
          "term index " + std::to_string(term) + " is not part of the model");
}

Eigen::VectorXd term_v(const FittedModel &model, Index p) {
  return v_diagonal(model.spec.terms[p], model.fit.theta.terms[p],
                    model.fit.theta.sigma2, model.factory.lambda_hat());
}

// Group column per row, -1 when the label is missing or unseen.
std::vector<Index> group_columns(const FittedModel &model, Index p,
                                 const DataBlock &block) {
  const TermSpec &term = model.spec.terms[p];
  std::vector<Index> cols(block.rows(), -1);
  if (term.label_column < 0 ||
      static_cast<std::size_t>(term.label_column) >= block.labels.size()) {
    return cols;
  }
  const auto &labels = block.labels[term.label_column];
  if (labels.empty()) {
    return cols;
  }
  require(static_cast<Index>(labels.size()) == block.rows(),
          ErrorCode::invalid_input, "label column length does not match the block");
  for (Index i = 0; i < block.rows(); ++i) {
    cols[i] = model.groups[p].find(labels[i]);
  }
  return cols;
}

} // namespace

EffectSurface recover_effects(const FittedModel &model, Index term,
                              const DataBlock &block, const RowMatrix &basis) {
  check_term(model, term);
  const TermSpec &t = model.spec.terms[term];
  const Eigen::VectorXd v = term_v(model, term);
  const Eigen::VectorXd &u = model.fit.u[term];
  const Eigen::MatrixXd &cov = model.fit.se_blocks[term];
  const Index n = block.rows();
  EffectSurface out;

  if (t.kind == TermKind::group) {
    const std::vector<Index> cols = group_columns(model, term, block);
    out.value = Eigen::VectorXd::Zero(n);
    out.se = Eigen::VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i) {
      if (cols[i] >= 0) {
        const Index g = cols[i];
        out.value(i) = v(g) * u(g);
        out.se(i) = std::abs(v(g)) * std::sqrt(std::max(cov(g, 0), 0.0));
      }
    }
    return out;
  }

  require(basis.rows() == n && basis.cols() == v.size(), ErrorCode::invalid_input,
          "basis block shape does not match term '" + t.name + "'");
  const Eigen::VectorXd vu = v.cwiseProduct(u);
  // G = [1, E V] for SVC terms (coefficient surface), E V for residual terms.
  const Index fixed = model.spec.fixed_column(t);
  const bool with_mean = t.kind == TermKind::svc && fixed >= 0;
  const Index width = v.size() + (with_mean ? 1 : 0);
  require(cov.rows() == width && cov.cols() == width, ErrorCode::invalid_input,
          "SE block of term '" + t.name + "' has the wrong shape");
  out.value = basis * vu;
  if (with_mean) {
    out.value.array() += model.fit.b(fixed);
  }
  // Row-wise quadratic forms, in chunks so no temporary rivals the basis block.
  out.se.resize(n);
  constexpr Index chunk = 256;
  Eigen::MatrixXd g(std::min(chunk, n), width);
  for (Index start = 0; start < n; start += chunk) {
    const Index m = std::min(chunk, n - start);
    if (with_mean) {
      g.col(0).head(m).setOnes();
    }
    g.topRightCorner(m, v.size()) = basis.middleRows(start, m) * v.asDiagonal();
    const Eigen::MatrixXd gs = g.topRows(m) * cov;
    out.se.segment(start, m) =
        gs.cwiseProduct(g.topRows(m)).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  }
  return out;
}

EffectSurface recover_effects(const FittedModel &model, Index term,
                              const DataBlock &block) {
  check_term(model, term);
  if (model.spec.terms[term].spatial()) {
    return recover_effects(model, term, block, nystrom_extend(model.factory, block.coords));
  }
  return recover_effects(model, term, block, RowMatrix());
}

Prediction predict_response(const FittedModel &model, const DataBlock &block) {
  const Index n = block.rows();
  const auto np = static_cast<Index>(model.spec.terms.size());
  Prediction out;
  out.fixed = n > 0 ? Eigen::VectorXd(model.spec.design(block) * model.fit.b)
                    : Eigen::VectorXd(0);
  out.fitted = out.fixed;
  out.effects.resize(n, np);
  out.se.resize(n, np);
  out.unseen_group.assign(n, false);
  if (n == 0) {
    return out;
  }

  const bool any_spatial =
      std::any_of(model.spec.terms.begin(), model.spec.terms.end(),
                  [](const TermSpec &t) { return t.spatial(); });
  RowMatrix basis;
  BasisAllocation token;
  if (any_spatial) {
    basis = nystrom_extend(model.factory, block.coords);
    token = BasisAllocation(static_cast<std::size_t>(basis.rows()),
                            static_cast<std::size_t>(basis.cols()));
  }
  for (Index p = 0; p < np; ++p) {
    const TermSpec &t = model.spec.terms[p];
    const EffectSurface s = recover_effects(model, p, block, basis);
    out.effects.col(p) = s.value;
    out.se.col(p) = s.se;
    switch (t.kind) {
    case TermKind::svc: {
      const Index fixed = model.spec.fixed_column(t);
      // The mean b_k is already part of X b.
      const double mean = fixed >= 0 ? model.fit.b(fixed) : 0.0;
      out.fitted.array() +=
          block.covariates.col(t.covariate).array() * (s.value.array() - mean);
      break;
    }
    case TermKind::residual_spatial:
      out.fitted += s.value;
      break;
    case TermKind::group: {
      const std::vector<Index> cols = group_columns(model, p, block);
      for (Index i = 0; i < n; ++i) {
        if (cols[i] < 0) {
          out.unseen_group[i] = true;
        }
      }
      out.fitted += s.value;
      break;
    }
    }
  }
  return out;
}

// ---------------------------------------------------------------- model file

namespace {

using nlohmann::json;

json to_json(const Eigen::MatrixXd &m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Eigen::VectorXd &v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from(const json &j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Index>(values.size()));
}

Eigen::MatrixXd matrix_from(const json &j, Index cols_if_empty = 0) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    require(static_cast<Index>(j[i].size()) == cols, ErrorCode::model_version,
            "ragged matrix in model file");
    for (Index c = 0; c < cols; ++c) {
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

TermKind term_kind_from(const std::string &s) {
  if (s == to_string(TermKind::svc)) {
    return TermKind::svc;
  }
  if (s == to_string(TermKind::group)) {
    return TermKind::group;
  }
  if (s == to_string(TermKind::residual_spatial)) {
    return TermKind::residual_spatial;
  }
  fail(ErrorCode::model_version, "unknown term kind '" + s + "' in model file");
}

} // namespace

void save_model(const std::string &path, const FittedModel &model) {
  const ModelSpec &spec = model.spec;
  const FitResult &fit = model.fit;
  const BasisFactory &f = model.factory;
  json j;
  j["format"] = "mesa-model";
  j["version"] = kModelFormatVersion;
  j["columns"] = {{"x", model.x_name}, {"y", model.y_name},
                  {"response", model.response_name}};
  j["intercept"] = spec.intercept;
  j["covariate_names"] = spec.covariate_names;
  j["label_names"] = spec.label_names;
  j["fixed"] = spec.fixed;
  json terms = json::array();
  for (std::size_t p = 0; p < spec.terms.size(); ++p) {
    const TermSpec &t = spec.terms[p];
    json jt = {{"kind", to_string(t.kind)},
               {"name", t.name},
               {"covariate", t.covariate},
               {"label_column", t.label_column},
               {"width", t.width},
               {"tau", fit.theta.terms[p].tau},
               {"alpha", fit.theta.terms[p].alpha},
               {"dropped", static_cast<bool>(fit.dropped[p])},
               {"u", to_json(fit.u[p])},
               {"se_block", to_json(fit.se_blocks[p])}};
    if (t.kind == TermKind::group) {
      jt["groups"] = model.groups[p].labels();
    }
    terms.push_back(std::move(jt));
  }
  j["terms"] = std::move(terms);
  Eigen::MatrixXd centers = f.knots().centers;
  j["basis"] = {{"knots", to_json(centers)},
                {"range", f.knots().range},
                {"range_source", f.knots().range_source == RangeSource::sites ? "sites" : "knots"},
                {"eigenvectors", to_json(f.eigen().vectors)},
                {"eigenvalues", to_json(f.eigen().values)},
                {"col_mean", to_json(Eigen::VectorXd(f.eigen().col_mean.transpose()))},
                {"sample_size", f.sample_size()},
                {"scaling_mode", to_string(f.scaling_mode())},
                {"lambda_hat", to_json(f.lambda_hat())}};
  j["fit"] = {{"b", to_json(fit.b)},
              {"sigma2", fit.sigma2},
              {"loglik", fit.loglik},
              {"d", fit.d},
              {"sweeps", fit.sweeps},
              {"converged", fit.converged},
              {"trace", fit.trace},
              {"n", fit.n},
              {"fixed_covariance", to_json(fit.fixed_covariance)},
              {"fit_seconds", fit.fit_seconds}};
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::invalid_input,
          "cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
  require(static_cast<bool>(out), ErrorCode::invalid_input,
          "failed writing '" + path + "'");
}

FittedModel load_model(const std::string &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::invalid_input,
          "cannot open model file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorCode::model_version, "'" + path + "' is not a model file: " + e.what());
  }
  require(j.is_object() && j.value("format", "") == "mesa-model",
          ErrorCode::model_version, "'" + path + "' is not a model file");
  const int version = j.value("version", -1);
  require(version == kModelFormatVersion, ErrorCode::model_version,
          "model format version " + std::to_string(version) +
              " is not supported (expected " + std::to_string(kModelFormatVersion) + ")");

  FittedModel m;
  try {
    m.x_name = j["columns"]["x"].get<std::string>();
    m.y_name = j["columns"]["y"].get<std::string>();
    m.response_name = j["columns"]["response"].get<std::string>();
    m.spec.intercept = j["intercept"].get<bool>();
    m.spec.covariate_names = j["covariate_names"].get<std::vector<std::string>>();
    m.spec.label_names = j["label_names"].get<std::vector<std::string>>();
    m.spec.fixed = j["fixed"].get<std::vector<Index>>();

    const json &jb = j["basis"];
    KnotSet knots;
    const Eigen::MatrixXd centers = matrix_from(jb["knots"], 2);
    knots.centers = centers;
    knots.range = jb["range"].get<double>();
    knots.range_source =
        jb["range_source"].get<std::string>() == "sites" ? RangeSource::sites : RangeSource::knots;
    KnotEigen eig;
    eig.values = vector_from(jb["eigenvalues"]);
    eig.vectors = matrix_from(jb["eigenvectors"], eig.values.size());
    eig.col_mean = vector_from(jb["col_mean"]).transpose();
    m.factory = BasisFactory(std::move(knots), std::move(eig),
                             jb["sample_size"].get<std::size_t>(),
                             scaling_mode_from_string(jb["scaling_mode"].get<std::string>()));
    const Eigen::VectorXd stored = vector_from(jb["lambda_hat"]);
    require(stored.size() == m.factory.lambda_hat().size() &&
                (stored - m.factory.lambda_hat()).cwiseAbs().maxCoeff() <=
                    1e-12 * stored.cwiseAbs().maxCoeff(),
            ErrorCode::model_version, "stored eigenvalues do not reproduce");

    const json &jf = j["fit"];
    m.fit.b = vector_from(jf["b"]);
    m.fit.sigma2 = jf["sigma2"].get<double>();
    m.fit.loglik = jf["loglik"].get<double>();
    m.fit.d = jf["d"].get<double>();
    m.fit.sweeps = jf["sweeps"].get<int>();
    m.fit.converged = jf["converged"].get<bool>();
    m.fit.trace = jf["trace"].get<std::vector<double>>();
    m.fit.n = jf["n"].get<std::size_t>();
    m.fit.fixed_covariance = matrix_from(jf["fixed_covariance"], m.fit.b.size());
    m.fit.fit_seconds = jf["fit_seconds"].get<double>();
    m.fit.theta.sigma2 = m.fit.sigma2;

    for (const json &jt : j["terms"]) {
      TermSpec t;
      t.kind = term_kind_from(jt["kind"].get<std::string>());
      t.name = jt["name"].get<std::string>();
      t.covariate = jt["covariate"].get<Index>();
      t.label_column = jt["label_column"].get<Index>();
      t.width = jt["width"].get<Index>();
      m.spec.terms.push_back(t);
      m.fit.theta.terms.push_back({jt["tau"].get<double>(), jt["alpha"].get<double>()});
      m.fit.dropped.push_back(jt["dropped"].get<bool>());
      m.fit.u.push_back(vector_from(jt["u"]));
      m.fit.se_blocks.push_back(matrix_from(jt["se_block"], 1));
      if (t.kind == TermKind::group) {
        m.groups.emplace_back(jt["groups"].get<std::vector<std::string>>());
      } else {
        m.groups.emplace_back();
      }
    }
  } catch (const json::exception &e) {
    fail(ErrorCode::model_version, "model file '" + path + "' is incomplete: " + e.what());
  }
  m.spec.validate();
  for (std::size_t p = 0; p < m.spec.terms.size(); ++p) {
    const TermSpec &t = m.spec.terms[p];
    const Index expect = t.spatial() ? m.factory.size() : m.groups[p].size();
    require(t.width == expect && m.fit.u[p].size() == expect, ErrorCode::model_version,
            "term '" + t.name + "' does not match the stored basis");
  }
  return m;
}

} // namespace mesa
