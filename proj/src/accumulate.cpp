#include "mesa/accumulate.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "mesa/error.hpp"

namespace mesa {

std::vector<Index> InnerProductStore::widths() const {
  std::vector<Index> out;
  out.reserve(ay.size());
  for (const auto &v : ay) {
    out.push_back(v.size());
  }
  return out;
}

Index InnerProductStore::order() const {
  Index total = fixed_count();
  for (const auto &v : ay) {
    total += v.size();
  }
  return total;
}

std::size_t InnerProductStore::pair_index(Index p, Index q) const {
  if (p > q) {
    std::swap(p, q);
  }
  const auto np = static_cast<std::size_t>(term_count());
  const auto up = static_cast<std::size_t>(p);
  // Row p of the upper triangle starts after rows 0..p-1.
  return up * np - up * (up - 1) / 2 + static_cast<std::size_t>(q - p);
}

bool InnerProductStore::same_shape(const InnerProductStore &other) const {
  return fixed_count() == other.fixed_count() && widths() == other.widths();
}

InnerProductStore init_store(Index k, const std::vector<Index> &widths) {
  require(k >= 1, ErrorCode::invalid_parameter, "fixed-effect count must be >= 1");
  InnerProductStore s;
  s.xy = Eigen::VectorXd::Zero(k);
  s.xx = Eigen::MatrixXd::Zero(k, k);
  for (Index w : widths) {
    require(w >= 1, ErrorCode::invalid_parameter, "term width must be >= 1");
    s.ay.push_back(Eigen::VectorXd::Zero(w));
    s.xa.push_back(Eigen::MatrixXd::Zero(k, w));
  }
  const auto p = static_cast<Index>(widths.size());
  for (Index a = 0; a < p; ++a) {
    for (Index b = a; b < p; ++b) {
      s.aa.push_back(Eigen::MatrixXd::Zero(widths[a], widths[b]));
    }
  }
  return s;
}

namespace {

// cross += A_p' A_q for one block, dispatching on indicator/dense storage.
void add_cross(Eigen::MatrixXd &cross, const TermBlock &a, const TermBlock &b,
               bool same) {
  const Index n = a.rows();
  if (!a.is_indicator() && !b.is_indicator()) {
    if (same) {
      cross.noalias() += a.values().transpose() * a.values();
    } else {
      cross.noalias() += a.values().transpose() * b.values();
    }
    return;
  }
  if (a.is_indicator() && b.is_indicator()) {
    for (Index i = 0; i < n; ++i) {
      cross(a.columns()[i], b.columns()[i]) += 1.0;
    }
    return;
  }
  if (a.is_indicator()) {
    for (Index i = 0; i < n; ++i) {
      cross.row(a.columns()[i]) += b.values().row(i);
    }
    return;
  }
  for (Index i = 0; i < n; ++i) {
    cross.col(b.columns()[i]) += a.values().row(i).transpose();
  }
}

} // namespace

void accumulate_block(InnerProductStore &store, const Eigen::MatrixXd &x,
                      const Eigen::VectorXd &y,
                      const std::vector<TermBlock> &blocks) {
  const Index n = y.size();
  require(x.rows() == n, ErrorCode::invalid_input,
          "design rows do not match response length");
  require(x.cols() == store.fixed_count(), ErrorCode::invalid_input,
          "design columns do not match the store");
  require(static_cast<Index>(blocks.size()) == store.term_count(),
          ErrorCode::invalid_input, "term block count does not match the store");
  for (Index p = 0; p < store.term_count(); ++p) {
    require(blocks[p].rows() == n && blocks[p].width() == store.width(p),
            ErrorCode::invalid_input,
            "term block " + std::to_string(p) + " has the wrong shape");
  }
  if (n == 0) {
    return;
  }

  store.yy += y.squaredNorm();
  store.xy.noalias() += x.transpose() * y;
  store.xx.noalias() += x.transpose() * x;
  for (Index p = 0; p < store.term_count(); ++p) {
    const TermBlock &a = blocks[p];
    if (a.is_indicator()) {
      for (Index i = 0; i < n; ++i) {
        const Index c = a.columns()[i];
        store.ay[p](c) += y(i);
        store.xa[p].col(c) += x.row(i).transpose();
      }
    } else {
      store.ay[p].noalias() += a.values().transpose() * y;
      store.xa[p].noalias() += x.transpose() * a.values();
    }
    for (Index q = p; q < store.term_count(); ++q) {
      add_cross(store.cross(p, q), a, blocks[q], p == q);
    }
  }
  store.n_seen += static_cast<std::size_t>(n);
}

void merge_into(InnerProductStore &target, const InnerProductStore &other) {
  require(target.same_shape(other), ErrorCode::invalid_input,
          "cannot merge stores of different shapes");
  target.yy += other.yy;
  target.xy += other.xy;
  target.xx += other.xx;
  for (std::size_t p = 0; p < target.ay.size(); ++p) {
    target.ay[p] += other.ay[p];
    target.xa[p] += other.xa[p];
  }
  for (std::size_t i = 0; i < target.aa.size(); ++i) {
    target.aa[i] += other.aa[i];
  }
  target.n_seen += other.n_seen;
}

InnerProductStore merge_stores(const InnerProductStore &a,
                               const InnerProductStore &b) {
  InnerProductStore out = a;
  merge_into(out, b);
  return out;
}

void finalize_store(InnerProductStore &store, std::size_t expected_rows) {
  require(store.n_seen > 0, ErrorCode::empty_data,
          "no rows were accumulated");
  require(expected_rows == 0 || store.n_seen == expected_rows,
          ErrorCode::invalid_input,
          "accumulated " + std::to_string(store.n_seen) + " rows, expected " +
              std::to_string(expected_rows));
  store.xx = (0.5 * (store.xx + store.xx.transpose())).eval();
  for (Index p = 0; p < store.term_count(); ++p) {
    Eigen::MatrixXd &m = store.cross(p, p);
    m = (0.5 * (m + m.transpose())).eval();
  }
}

double relative_min_eigenvalue(const Eigen::MatrixXd &m) {
  const double trace = m.trace();
  if (m.size() == 0 || trace == 0.0) {
    return 0.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0) / trace;
}

namespace {

constexpr std::array<char, 8> kStoreMagic = {'M', 'E', 'S', 'A', 'I', 'P', 'S', '\0'};

template <typename T> void put(std::ostream &out, T value) {
  out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T> T get(std::istream &in) {
  T value{};
  in.read(reinterpret_cast<char *>(&value), sizeof(T));
  require(static_cast<bool>(in), ErrorCode::model_version,
          "store file is truncated");
  return value;
}

void put_dense(std::ostream &out, const Eigen::MatrixXd &m) {
  out.write(reinterpret_cast<const char *>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void get_dense(std::istream &in, double *data, Index count) {
  in.read(reinterpret_cast<char *>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  require(static_cast<bool>(in), ErrorCode::model_version,
          "store file is truncated");
}

} // namespace

void write_store(const std::string &path, const InnerProductStore &store) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::invalid_input,
          "cannot open '" + path + "' for writing");
  out.write(kStoreMagic.data(), kStoreMagic.size());
  put<std::uint32_t>(out, kStoreFormatVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(store.fixed_count()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(store.term_count()));
  for (Index w : store.widths()) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(w));
  }
  put<std::uint64_t>(out, store.n_seen);
  put<double>(out, store.yy);
  put_dense(out, store.xy);
  for (const auto &v : store.ay) {
    put_dense(out, v);
  }
  put_dense(out, store.xx);
  for (const auto &m : store.xa) {
    put_dense(out, m);
  }
  for (const auto &m : store.aa) {
    put_dense(out, m);
  }
  require(static_cast<bool>(out), ErrorCode::invalid_input,
          "failed writing '" + path + "'");
}

InnerProductStore read_store(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::invalid_input,
          "cannot open '" + path + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  require(static_cast<bool>(in) && magic == kStoreMagic, ErrorCode::model_version,
          "'" + path + "' is not an inner-product store");
  const auto version = get<std::uint32_t>(in);
  require(version == kStoreFormatVersion, ErrorCode::model_version,
          "store format version " + std::to_string(version) +
              " is not supported (expected " +
              std::to_string(kStoreFormatVersion) + ")");
  const auto k = static_cast<Index>(get<std::uint64_t>(in));
  const auto p = static_cast<Index>(get<std::uint64_t>(in));
  std::vector<Index> widths(p);
  for (auto &w : widths) {
    w = static_cast<Index>(get<std::uint64_t>(in));
  }
  InnerProductStore s = init_store(k, widths);
  s.n_seen = get<std::uint64_t>(in);
  s.yy = get<double>(in);
  get_dense(in, s.xy.data(), s.xy.size());
  for (auto &v : s.ay) {
    get_dense(in, v.data(), v.size());
  }
  get_dense(in, s.xx.data(), s.xx.size());
  for (auto &m : s.xa) {
    get_dense(in, m.data(), m.size());
  }
  for (auto &m : s.aa) {
    get_dense(in, m.data(), m.size());
  }
  return s;
}

} // namespace mesa
