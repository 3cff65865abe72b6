#include "mesa/source.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string_view>

#include "mesa/error.hpp"

namespace mesa {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

void split(std::string_view line, char delim, std::vector<std::string_view> &out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool parse_double(std::string_view s, double &value) {
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  if (s.empty()) {
    return false;
  }
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  return ec == std::errc() && ptr == s.data() + s.size();
}

} // namespace

CsvSource::CsvSource(std::string path, ColumnBinding binding, char delimiter)
    : path_(std::move(path)), binding_(std::move(binding)), delimiter_(delimiter) {
  open();
}

Index CsvSource::column(const std::string &name) const {
  const auto it = std::find(header_.begin(), header_.end(), name);
  require(it != header_.end(), ErrorCode::invalid_input,
          "column '" + name + "' is not in the header of '" + path_ + "'");
  return static_cast<Index>(it - header_.begin());
}

void CsvSource::open() {
  in_ = std::ifstream(path_);
  require(static_cast<bool>(in_), ErrorCode::invalid_input,
          "cannot open '" + path_ + "'");
  std::string line;
  require(static_cast<bool>(std::getline(in_, line)), ErrorCode::malformed_data,
          "'" + path_ + "' has no header row");
  line_ = 1;
  row_ = 0;
  std::vector<std::string_view> fields;
  split(line, delimiter_, fields);
  header_.assign(fields.begin(), fields.end());
  x_col_ = column(binding_.x);
  y_col_ = column(binding_.y);
  response_col_ = binding_.response.empty() ? -1 : column(binding_.response);
  covariate_cols_.clear();
  for (const auto &c : binding_.covariates) {
    covariate_cols_.push_back(column(c));
  }
  label_cols_.clear();
  for (const auto &c : binding_.labels) {
    label_cols_.push_back(column(c));
  }
}

void CsvSource::rewind() { open(); }

bool CsvSource::next(DataBlock &out, std::size_t max_rows) {
  const auto nc = static_cast<Index>(covariate_cols_.size());
  const std::size_t nl = label_cols_.size();
  std::vector<double> coords, y, cov;
  std::vector<std::vector<std::string>> labels(nl);
  std::vector<std::string_view> fields;
  std::string line;
  std::size_t rows = 0;
  const std::size_t first = row_;
  while (rows < max_rows && std::getline(in_, line)) {
    ++line_;
    if (trim(line).empty()) {
      continue;
    }
    split(line, delimiter_, fields);
    auto where = [&](const std::string &what) {
      return "'" + path_ + "' line " + std::to_string(line_) + ": " + what;
    };
    require(fields.size() == header_.size(), ErrorCode::malformed_data,
            where("expected " + std::to_string(header_.size()) + " fields, found " +
                  std::to_string(fields.size())));
    auto number = [&](Index col) {
      double v = 0.0;
      require(parse_double(fields[col], v), ErrorCode::malformed_data,
              where("column '" + header_[col] + "' value '" +
                    std::string(fields[col]) + "' is not a number"));
      return v;
    };
    coords.push_back(number(x_col_));
    coords.push_back(number(y_col_));
    if (response_col_ >= 0) {
      y.push_back(number(response_col_));
    }
    for (Index c = 0; c < nc; ++c) {
      cov.push_back(number(covariate_cols_[c]));
    }
    for (std::size_t l = 0; l < nl; ++l) {
      labels[l].emplace_back(fields[label_cols_[l]]);
    }
    ++rows;
  }
  row_ += rows;
  const auto n = static_cast<Index>(rows);
  out.first_row = first;
  out.coords = Eigen::Map<const Coords>(coords.data(), n, 2);
  out.y = response_col_ >= 0 ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(y.data(), n))
                             : Eigen::VectorXd();
  out.covariates =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          cov.data(), n, nc);
  out.labels = std::move(labels);
  return rows > 0;
}

DataBlock slice_rows(const DataBlock &table, std::size_t begin, std::size_t count) {
  const auto b = static_cast<Index>(begin);
  const auto n = static_cast<Index>(count);
  DataBlock out;
  out.first_row = table.first_row + begin;
  out.coords = table.coords.middleRows(b, n);
  if (table.y.size() > 0) {
    out.y = table.y.segment(b, n);
  }
  out.covariates = table.covariates.middleRows(b, n);
  for (const auto &col : table.labels) {
    out.labels.emplace_back(col.begin() + b, col.begin() + b + n);
  }
  return out;
}

bool MemorySource::next(DataBlock &out, std::size_t max_rows) {
  const auto total = static_cast<std::size_t>(table_.rows());
  if (pos_ >= total) {
    out = slice_rows(table_, total, 0);
    return false;
  }
  const std::size_t count = std::min(max_rows, total - pos_);
  out = slice_rows(table_, pos_, count);
  pos_ += count;
  return true;
}

std::size_t count_non_finite(const DataBlock &block) {
  std::size_t bad = 0;
  bad += static_cast<std::size_t>((!block.coords.array().isFinite()).count());
  bad += static_cast<std::size_t>((!block.y.array().isFinite()).count());
  bad += static_cast<std::size_t>((!block.covariates.array().isFinite()).count());
  return bad;
}

} // namespace mesa
