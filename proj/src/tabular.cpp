#include "dtgan/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "dtgan/common.hpp"
#include "json.hpp"

namespace dtgan::tabular {

namespace {

bool parse_double(const std::string& s, double* out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  if (begin == end) return false;
  double v;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\n\r") != std::string::npos;
}

void append_field(std::string& out, const std::string& field) {
  if (!needs_quoting(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

Table parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = true;  // next field exists even if empty
        break;
      case '\r':
        break;
      case '\n':
        if (!record.empty() || !field.empty() || field_started) end_record();
        break;
      default:
        field += c;
        field_started = true;
        break;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted CSV field");
  if (!record.empty() || !field.empty() || field_started) end_record();

  if (records.empty()) throw DataError("empty CSV input");
  Table table;
  table.header = records.front();
  for (size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw DataError("CSV row " + std::to_string(r) + " has " +
                      std::to_string(records[r].size()) + " fields, expected " +
                      std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

Table read_csv(const std::string& path) { return parse_csv(read_file(path)); }

std::string to_csv(const Table& table) {
  std::string out;
  for (size_t c = 0; c < table.header.size(); ++c) {
    if (c) out += ',';
    append_field(out, table.header[c]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      append_field(out, row[c]);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Table& table, const std::string& path) {
  atomic_write_file(path, to_csv(table));
}

int ColumnSpec::category_index(const std::string& value) const {
  auto it = std::lower_bound(categories.begin(), categories.end(), value);
  if (it == categories.end() || *it != value) return -1;
  return static_cast<int>(it - categories.begin());
}

Schema::Schema(std::vector<ColumnSpec> columns, std::string target)
    : columns_(std::move(columns)), target_(std::move(target)) {
  if (columns_.empty()) throw DataError("schema needs at least one column");
  std::set<std::string> names;
  int target_idx = -1;
  for (size_t i = 0; i < columns_.size(); ++i) {
    const auto& col = columns_[i];
    if (!names.insert(col.name).second) throw DataError("duplicate column name: " + col.name);
    if (col.kind == ColumnKind::categorical) {
      if (col.categories.empty()) throw DataError("categorical column without categories: " + col.name);
    }
    if (col.name == target_) target_idx = static_cast<int>(i);
  }
  if (target_idx < 0) throw DataError("target column not found: " + target_);
  if (columns_[target_idx].kind != ColumnKind::categorical) {
    throw DataError("target column must be categorical: " + target_);
  }
  target_index_ = static_cast<size_t>(target_idx);

  offsets_.resize(columns_.size());
  condition_offsets_.assign(columns_.size(), -1);
  for (size_t i = 0; i < columns_.size(); ++i) {
    offsets_[i] = encoded_width_;
    encoded_width_ += columns_[i].encoded_width();
    if (columns_[i].kind == ColumnKind::categorical) {
      condition_offsets_[i] = condition_width_;
      condition_width_ += columns_[i].encoded_width();
      categorical_columns_.push_back(i);
    } else {
      continuous_columns_.push_back(i);
    }
  }
}

int Schema::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Schema infer_schema(const Table& table, const std::string& target, int max_categories) {
  if (table.rows.empty()) throw DataError("cannot infer a schema from an empty table");
  if (max_categories < 1) throw ConfigError("max_categories must be >= 1");

  std::vector<ColumnSpec> specs;
  for (size_t c = 0; c < table.num_cols(); ++c) {
    bool numeric = true;
    bool integer_valued = true;
    double min = 0.0, max = 0.0;
    bool first = true;
    std::set<std::string> distinct;
    for (size_t r = 0; r < table.num_rows(); ++r) {
      const std::string& cell = table.rows[r][c];
      if (cell.empty()) {
        throw DataError("missing value at row " + std::to_string(r) + ", column '" +
                        table.header[c] + "'");
      }
      distinct.insert(cell);
      double v;
      if (numeric && parse_double(cell, &v)) {
        if (v != std::trunc(v)) integer_valued = false;
        if (first) {
          min = max = v;
          first = false;
        } else {
          min = std::min(min, v);
          max = std::max(max, v);
        }
      } else {
        numeric = false;
      }
    }

    ColumnSpec spec;
    spec.name = table.header[c];
    bool categorical =
        !numeric || (integer_valued && distinct.size() <= static_cast<size_t>(max_categories));
    if (categorical) {
      spec.kind = ColumnKind::categorical;
      spec.categories.assign(distinct.begin(), distinct.end());  // set iterates sorted
      std::map<std::string, long> counts;
      for (const auto& row : table.rows) ++counts[row[c]];
      for (const auto& cat : spec.categories) {
        spec.frequencies.push_back(static_cast<double>(counts[cat]) /
                                   static_cast<double>(table.num_rows()));
      }
    } else {
      spec.kind = ColumnKind::continuous;
      spec.min = min;
      spec.max = max;
    }
    specs.push_back(std::move(spec));
  }
  return Schema(std::move(specs), target);
}

EncodedMatrix encode(const Schema& schema, const Table& table) {
  if (table.num_cols() != schema.num_columns()) {
    throw DataError("table has " + std::to_string(table.num_cols()) + " columns, schema expects " +
                    std::to_string(schema.num_columns()));
  }
  EncodedMatrix out = EncodedMatrix::Zero(static_cast<Eigen::Index>(table.num_rows()),
                                          schema.encoded_width());
  for (size_t r = 0; r < table.num_rows(); ++r) {
    for (size_t c = 0; c < schema.num_columns(); ++c) {
      const ColumnSpec& spec = schema.column(c);
      const std::string& cell = table.rows[r][c];
      if (cell.empty()) {
        throw DataError("missing value at row " + std::to_string(r) + ", column '" + spec.name +
                        "'");
      }
      int off = schema.encoded_offset(c);
      if (spec.kind == ColumnKind::continuous) {
        double v;
        if (!parse_double(cell, &v)) {
          throw DataError("unparsable numeric cell at row " + std::to_string(r) + ", column '" +
                          spec.name + "': " + cell);
        }
        double span = spec.max - spec.min;
        // Degenerate (min == max) columns encode to the constant 0.
        double scaled = span == 0.0 ? 0.0 : 2.0 * (v - spec.min) / span - 1.0;
        out(static_cast<Eigen::Index>(r), off) = static_cast<float>(scaled);
      } else {
        int idx = spec.category_index(cell);
        if (idx < 0) {
          throw DataError("unknown category at row " + std::to_string(r) + ", column '" +
                          spec.name + "': " + cell);
        }
        out(static_cast<Eigen::Index>(r), off + idx) = 1.0f;
      }
    }
  }
  return out;
}

Table decode(const Schema& schema, const EncodedMatrix& matrix) {
  if (matrix.cols() != schema.encoded_width()) throw DataError("encoded width mismatch");
  Table table;
  for (const auto& col : schema.columns()) table.header.push_back(col.name);
  table.rows.reserve(static_cast<size_t>(matrix.rows()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(schema.num_columns());
    for (size_t c = 0; c < schema.num_columns(); ++c) {
      const ColumnSpec& spec = schema.column(c);
      int off = schema.encoded_offset(c);
      if (spec.kind == ColumnKind::continuous) {
        double v = std::clamp(static_cast<double>(matrix(r, off)), -1.0, 1.0);
        double raw = spec.max == spec.min ? spec.min : spec.min + (v + 1.0) * (spec.max - spec.min) / 2.0;
        row.push_back(format_number(raw));
      } else {
        int best = 0;
        float best_val = matrix(r, off);
        for (int k = 1; k < spec.encoded_width(); ++k) {
          if (matrix(r, off + k) > best_val) {
            best_val = matrix(r, off + k);
            best = k;
          }
        }
        row.push_back(spec.categories[static_cast<size_t>(best)]);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ConditionVector sample_condition(const Schema& schema, Rng& rng) {
  ConditionVector cond;
  cond.dense = Eigen::VectorXf::Zero(schema.condition_width());
  const auto& cats = schema.categorical_columns();
  if (cats.empty()) return cond;  // degenerate mode: conditioning disabled

  size_t col = cats[rng.uniform_int(cats.size())];
  const ColumnSpec& spec = schema.column(col);
  std::vector<double> weights;
  weights.reserve(spec.frequencies.size());
  double total = 0.0;
  for (double f : spec.frequencies) {
    double w = std::log1p(f);
    weights.push_back(w);
    total += w;
  }
  double u = rng.uniform() * total;
  size_t pick = weights.size() - 1;
  double acc = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) {
      pick = k;
      break;
    }
  }
  cond.column = static_cast<int>(col);
  cond.category = static_cast<int>(pick);
  cond.dense[schema.condition_offset(col) + static_cast<int>(pick)] = 1.0f;
  return cond;
}

std::vector<TypedColumn> typify(const Schema& schema, const Table& table) {
  if (table.num_cols() != schema.num_columns()) throw DataError("column count mismatch");
  std::vector<TypedColumn> cols(schema.num_columns());
  for (size_t c = 0; c < schema.num_columns(); ++c) {
    const ColumnSpec& spec = schema.column(c);
    for (size_t r = 0; r < table.num_rows(); ++r) {
      const std::string& cell = table.rows[r][c];
      if (spec.kind == ColumnKind::continuous) {
        double v;
        if (!parse_double(cell, &v)) {
          throw DataError("unparsable numeric cell at row " + std::to_string(r) + ", column '" +
                          spec.name + "': " + cell);
        }
        cols[c].values.push_back(v);
      } else {
        int idx = spec.category_index(cell);
        if (idx < 0) {
          throw DataError("unknown category at row " + std::to_string(r) + ", column '" +
                          spec.name + "': " + cell);
        }
        cols[c].categories.push_back(idx);
      }
    }
  }
  return cols;
}

namespace {

nlohmann::json column_to_json(const ColumnSpec& col) {
  nlohmann::json j;
  j["name"] = col.name;
  if (col.kind == ColumnKind::continuous) {
    j["kind"] = "continuous";
    j["min"] = col.min;
    j["max"] = col.max;
  } else {
    j["kind"] = "categorical";
    j["categories"] = col.categories;
    j["frequencies"] = col.frequencies;
  }
  return j;
}

ColumnSpec column_from_json(const nlohmann::json& j) {
  ColumnSpec col;
  col.name = j.at("name").get<std::string>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "continuous") {
    col.kind = ColumnKind::continuous;
    col.min = j.at("min").get<double>();
    col.max = j.at("max").get<double>();
  } else if (kind == "categorical") {
    col.kind = ColumnKind::categorical;
    col.categories = j.at("categories").get<std::vector<std::string>>();
    col.frequencies = j.at("frequencies").get<std::vector<double>>();
  } else {
    throw DataError("unknown column kind: " + kind);
  }
  return col;
}

}  // namespace

std::string Schema::to_json() const {
  nlohmann::json j;
  j["target"] = target_;
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& col : columns_) cols.push_back(column_to_json(col));
  j["columns"] = cols;
  return j.dump(2);
}

Schema Schema::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  std::vector<ColumnSpec> cols;
  for (const auto& cj : j.at("columns")) cols.push_back(column_from_json(cj));
  return Schema(std::move(cols), j.at("target").get<std::string>());
}

}  // namespace dtgan::tabular
