#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mesa/terms.hpp"

namespace mesa {

/// Which input columns feed a DataBlock.
struct ColumnBinding {
  std::string x = "x";
  std::string y = "y";
  // Empty: the source carries no response (prediction input).
  std::string response;
  std::vector<std::string> covariates;
  std::vector<std::string> labels;
};

/// Sequential reader of row blocks. Blocks arrive in file order and carry
/// their starting row in DataBlock::first_row.
class BlockSource {
public:
  virtual ~BlockSource() = default;
  virtual void rewind() = 0;
  /// Fills `out` with up to max_rows rows; returns false at the end.
  virtual bool next(DataBlock &out, std::size_t max_rows) = 0;
  /// Total rows when known without a pass, otherwise nullopt.
  virtual std::optional<std::size_t> size_hint() const { return std::nullopt; }
};

/// Delimited text with a header row. Numeric fields are parsed as decimals;
/// a malformed row raises malformed_data with its line number. Non-finite
/// numbers are parsed and left to the caller to count and reject.
class CsvSource : public BlockSource {
public:
  CsvSource(std::string path, ColumnBinding binding, char delimiter = ',');

  void rewind() override;
  bool next(DataBlock &out, std::size_t max_rows) override;

  const std::vector<std::string> &header() const { return header_; }
  const ColumnBinding &binding() const { return binding_; }

private:
  void open();
  Index column(const std::string &name) const;

  std::string path_;
  ColumnBinding binding_;
  char delimiter_;
  std::ifstream in_;
  std::vector<std::string> header_;
  std::size_t line_ = 0;
  std::size_t row_ = 0;
  Index x_col_ = -1;
  Index y_col_ = -1;
  Index response_col_ = -1;
  std::vector<Index> covariate_cols_;
  std::vector<Index> label_cols_;
};

/// Serves slices of an in-memory table.
class MemorySource : public BlockSource {
public:
  explicit MemorySource(DataBlock table) : table_(std::move(table)) {}

  void rewind() override { pos_ = 0; }
  bool next(DataBlock &out, std::size_t max_rows) override;
  std::optional<std::size_t> size_hint() const override {
    return static_cast<std::size_t>(table_.rows());
  }

  const DataBlock &table() const { return table_; }

private:
  DataBlock table_;
  std::size_t pos_ = 0;
};

/// Rows [begin, begin + count) of a table as a block.
DataBlock slice_rows(const DataBlock &table, std::size_t begin, std::size_t count);

/// Counts non-finite numeric entries (coordinates, response, covariates).
std::size_t count_non_finite(const DataBlock &block);

} // namespace mesa
