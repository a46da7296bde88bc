#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "dtgan/rng.hpp"

namespace dtgan::tabular {

/// Raw string table as read from CSV: header plus rows.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  size_t num_rows() const { return rows.size(); }
  size_t num_cols() const { return header.size(); }
};

Table read_csv(const std::string& path);
Table parse_csv(const std::string& text);
void write_csv(const Table& table, const std::string& path);  // atomic
std::string to_csv(const Table& table);

enum class ColumnKind { continuous, categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  // continuous
  double min = 0.0;
  double max = 0.0;
  // categorical: lexicographically sorted, with empirical frequencies
  std::vector<std::string> categories;
  std::vector<double> frequencies;

  int encoded_width() const {
    return kind == ColumnKind::continuous ? 1 : static_cast<int>(categories.size());
  }
  int category_index(const std::string& value) const;  // -1 if unknown
};

class Schema {
 public:
  Schema() = default;
  Schema(std::vector<ColumnSpec> columns, std::string target);

  const std::vector<ColumnSpec>& columns() const { return columns_; }
  const ColumnSpec& column(size_t i) const { return columns_[i]; }
  const std::string& target() const { return target_; }
  size_t target_index() const { return target_index_; }
  int column_index(const std::string& name) const;  // -1 if unknown

  size_t num_columns() const { return columns_.size(); }
  int encoded_width() const { return encoded_width_; }
  int encoded_offset(size_t column) const { return offsets_[column]; }
  /// Sum of categorical widths; the conditional one-hot lives in this space.
  int condition_width() const { return condition_width_; }
  int condition_offset(size_t column) const { return condition_offsets_[column]; }
  const std::vector<size_t>& categorical_columns() const { return categorical_columns_; }
  const std::vector<size_t>& continuous_columns() const { return continuous_columns_; }

  std::string to_json() const;
  static Schema from_json(const std::string& json);

 private:
  std::vector<ColumnSpec> columns_;
  std::string target_;
  size_t target_index_ = 0;
  int encoded_width_ = 0;
  int condition_width_ = 0;
  std::vector<int> offsets_;
  std::vector<int> condition_offsets_;
  std::vector<size_t> categorical_columns_;
  std::vector<size_t> continuous_columns_;
};

/// Infers column kinds from raw strings. A column is categorical when it
/// contains any non-numeric cell, or when it is integer-valued with at most
/// `max_categories` distinct values. Empty cells are rejected with their
/// coordinates. The result does not depend on row order.
Schema infer_schema(const Table& table, const std::string& target, int max_categories = 20);

using EncodedMatrix = Eigen::MatrixXf;

/// Continuous columns min-max scaled to [-1, 1]; categorical one-hot.
EncodedMatrix encode(const Schema& schema, const Table& table);
/// Total inverse: continuous values are clamped to [-1, 1] and un-scaled,
/// categorical blocks decoded by argmax. Numbers are printed in shortest
/// round-trip form.
Table decode(const Schema& schema, const EncodedMatrix& matrix);

/// One-hot constraint over all categorical slots.
struct ConditionVector {
  int column = -1;    // schema column index, -1 in degenerate (no categorical) mode
  int category = -1;  // category index within that column
  Eigen::VectorXf dense;  // length = schema.condition_width()
};

/// Column uniform among categorical columns; category with probability
/// proportional to log(1 + frequency).
ConditionVector sample_condition(const Schema& schema, Rng& rng);

/// Typed view used by metrics and attacks: continuous columns parsed to
/// doubles, categorical to category indices.
struct TypedColumn {
  std::vector<double> values;   // continuous
  std::vector<int> categories;  // categorical
};

std::vector<TypedColumn> typify(const Schema& schema, const Table& table);

/// Shortest round-trip decimal form of v.
std::string format_number(double v);

}  // namespace dtgan::tabular
