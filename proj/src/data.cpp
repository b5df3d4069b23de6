#include "gtt/data.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "gtt/rng.hpp"

namespace gtt {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

bool parse_double(const std::string& text, double& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string layout_string(const std::string& name, const std::string& label, const std::string& positive,
                          const std::vector<std::string>& categorical, const std::vector<std::string>& continuous) {
  return "name=" + name + "\nlabel=" + label + "\npositive=" + positive + "\ncategorical=" + join(categorical, ",") +
         "\ncontinuous=" + join(continuous, ",") + "\n";
}

}  // namespace

// ---- schema files ------------------------------------------------------------

SchemaFile parse_schema_text(const std::string& text, const std::string& source) {
  SchemaFile schema;
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    if (key == "name") {
      schema.name = value;
    } else if (key == "label") {
      schema.label = value;
    } else if (key == "positive") {
      schema.positive = value;
    } else if (key == "categorical") {
      schema.categorical = split_list(value);
    } else if (key == "continuous") {
      schema.continuous = split_list(value);
    } else if (key == "ignore") {
      schema.ignore = split_list(value);
    } else if (key == "delimiter") {
      if (value.size() != 1) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": delimiter must be one character");
      }
      schema.delimiter = value[0];
    } else if (key == "missing") {
      schema.missing = split_list(value);
      schema.missing.emplace_back();
    } else {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (schema.label.empty()) throw ConfigError(source + ": missing 'label'");
  if (schema.positive.empty()) throw ConfigError(source + ": missing 'positive'");
  if (schema.categorical.empty() && schema.continuous.empty()) {
    throw ConfigError(source + ": no feature columns declared");
  }
  std::set<std::string> names{schema.label};
  for (const auto* list : {&schema.categorical, &schema.continuous, &schema.ignore}) {
    for (const auto& col : *list) {
      if (!names.insert(col).second) throw ConfigError(source + ": column '" + col + "' declared twice");
    }
  }
  return schema;
}

SchemaFile load_schema_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFileError(DataFileError::Kind::kMissingFile, "cannot open schema file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_schema_text(buffer.str(), path);
}

std::string canonical_text(const SchemaFile& schema) {
  std::vector<std::string> missing;
  for (const auto& m : schema.missing) {
    if (!m.empty()) missing.push_back(m);
  }
  std::ostringstream os;
  os << "name = " << schema.name << "\n"
     << "label = " << schema.label << "\n"
     << "positive = " << schema.positive << "\n"
     << "categorical = " << join(schema.categorical, ", ") << "\n"
     << "continuous = " << join(schema.continuous, ", ") << "\n"
     << "ignore = " << join(schema.ignore, ", ") << "\n"
     << "delimiter = " << schema.delimiter << "\n"
     << "missing = " << join(missing, ", ") << "\n";
  return os.str();
}

std::uint64_t layout_fingerprint(const SchemaFile& schema) {
  return fnv1a(layout_string(schema.name, schema.label, schema.positive, schema.categorical, schema.continuous));
}

// ---- CSV ---------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv_records(std::istream& in, char delimiter) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted_field = false;
  bool in_quotes = false;
  auto end_field = [&] {
    record.push_back(quoted_field ? field : trim(field));
    field.clear();
    quoted_field = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
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
    } else if (c == '"' && trim(field).empty()) {
      field.clear();
      in_quotes = true;
      quoted_field = true;
    } else if (c == delimiter) {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (in_quotes) throw DataFileError(DataFileError::Kind::kMalformed, "csv: unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  return records;
}

RawTable parse_csv(std::istream& in, const SchemaFile& schema, const std::string& source) {
  auto records = parse_csv_records(in, schema.delimiter);
  if (records.empty()) throw DataFileError(DataFileError::Kind::kEmptyFile, source + ": file is empty");
  const auto& header = records.front();
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;

  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) {
      throw DataFileError(DataFileError::Kind::kMissingColumn, source + ": declared column '" + name + "' not found");
    }
    return it->second;
  };
  std::set<std::string> declared(schema.ignore.begin(), schema.ignore.end());
  declared.insert(schema.label);
  declared.insert(schema.categorical.begin(), schema.categorical.end());
  declared.insert(schema.continuous.begin(), schema.continuous.end());
  for (const auto& name : header) {
    if (!declared.count(name)) {
      throw DataFileError(DataFileError::Kind::kUndeclaredColumn,
                          source + ": column '" + name + "' is not declared in the schema");
    }
  }
  const std::size_t label_pos = locate(schema.label);
  std::vector<std::size_t> cat_pos, cont_pos;
  for (const auto& name : schema.categorical) cat_pos.push_back(locate(name));
  for (const auto& name : schema.continuous) cont_pos.push_back(locate(name));

  const std::size_t rows = records.size() - 1;
  if (rows == 0) throw DataFileError(DataFileError::Kind::kEmptyFile, source + ": no data rows");
  const std::set<std::string> missing(schema.missing.begin(), schema.missing.end());

  RawTable table;
  table.schema = schema;
  table.rows = rows;
  table.categorical.assign(cat_pos.size(), std::vector<std::string>(rows));
  table.continuous.assign(cont_pos.size(), std::vector<double>(rows));
  table.label_tokens.resize(rows);

  std::vector<std::string> bad_cells;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& rec = records[r + 1];
    if (rec.size() != header.size()) {
      throw DataFileError(DataFileError::Kind::kMalformed, source + ": row " + std::to_string(r + 1) + " has " +
                                                               std::to_string(rec.size()) + " fields, header has " +
                                                               std::to_string(header.size()));
    }
    table.label_tokens[r] = rec[label_pos];
    if (missing.count(rec[label_pos])) {
      throw DataFileError(DataFileError::Kind::kBadValue, source + ": row " + std::to_string(r + 1) + " has no label");
    }
    for (std::size_t j = 0; j < cat_pos.size(); ++j) {
      const auto& cell = rec[cat_pos[j]];
      table.categorical[j][r] = missing.count(cell) ? kMissingCategory : cell;
    }
    for (std::size_t j = 0; j < cont_pos.size(); ++j) {
      const auto& cell = rec[cont_pos[j]];
      double value = std::numeric_limits<double>::quiet_NaN();
      if (!missing.count(cell) && !parse_double(cell, value)) {
        bad_cells.push_back("row " + std::to_string(r + 1) + " column '" + schema.continuous[j] + "' value '" + cell +
                            "'");
      }
      table.continuous[j][r] = value;
    }
  }
  if (!bad_cells.empty()) {
    std::string msg = source + ": " + std::to_string(bad_cells.size()) + " non-numeric continuous value(s): ";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad_cells.size(), 10); ++i) {
      msg += (i ? "; " : "") + bad_cells[i];
    }
    throw DataFileError(DataFileError::Kind::kBadValue, msg);
  }
  return table;
}

RawTable load_csv(const std::string& path, const SchemaFile& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFileError(DataFileError::Kind::kMissingFile, "cannot open data file " + path);
  return parse_csv(in, schema, path);
}

// ---- splits and encoders -----------------------------------------------------

Splits split_indices(std::size_t n_rows, std::uint64_t seed) {
  if (n_rows < 20) throw DataError("split_indices: need at least 20 rows, got " + std::to_string(n_rows));
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, Stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_train = n_rows * 65 / 100;
  const std::size_t n_val = n_rows * 15 / 100;
  Splits s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

std::int64_t CategoricalEncoder::encode(const std::string& value) const {
  auto it = index.find(value);
  return it == index.end() ? unseen_id() : it->second;
}

std::vector<std::size_t> DatasetSchema::vocab_sizes() const {
  std::vector<std::size_t> out;
  for (const auto& enc : categorical) out.push_back(enc.vocab.size());
  return out;
}

std::uint64_t DatasetSchema::fingerprint() const {
  std::vector<std::string> cat, cont;
  for (const auto& e : categorical) cat.push_back(e.name);
  for (const auto& e : continuous) cont.push_back(e.name);
  return fnv1a(layout_string(name, label, positive, cat, cont));
}

DatasetSchema fit_encoders(const RawTable& raw, const Splits& splits) {
  const auto& first = raw.label_tokens.front();
  if (std::all_of(raw.label_tokens.begin(), raw.label_tokens.end(), [&](const auto& t) { return t == first; })) {
    throw DataError("fit_encoders: label column '" + raw.schema.label + "' is constant");
  }
  for (std::size_t idx : splits.train) {
    if (idx >= raw.rows) throw DataError("fit_encoders: split index " + std::to_string(idx) + " out of range");
  }
  DatasetSchema schema;
  schema.name = raw.schema.name;
  schema.label = raw.schema.label;
  schema.positive = raw.schema.positive;

  for (std::size_t j = 0; j < raw.categorical.size(); ++j) {
    CategoricalEncoder enc;
    enc.name = raw.schema.categorical[j];
    std::set<std::string> values;
    for (std::size_t idx : splits.train) values.insert(raw.categorical[j][idx]);
    enc.vocab.assign(values.begin(), values.end());
    for (std::size_t i = 0; i < enc.vocab.size(); ++i) enc.index[enc.vocab[i]] = static_cast<std::int64_t>(i);
    schema.categorical.push_back(std::move(enc));
  }
  for (std::size_t j = 0; j < raw.continuous.size(); ++j) {
    ContinuousEncoder enc;
    enc.name = raw.schema.continuous[j];
    std::vector<double> present;
    for (std::size_t idx : splits.train) {
      const double v = raw.continuous[j][idx];
      if (!std::isnan(v)) present.push_back(v);
    }
    if (!present.empty()) {
      std::sort(present.begin(), present.end());
      const std::size_t mid = present.size() / 2;
      enc.median = present.size() % 2 ? present[mid] : 0.5 * (present[mid - 1] + present[mid]);
    }
    double total = 0.0;
    for (std::size_t idx : splits.train) {
      const double v = raw.continuous[j][idx];
      total += std::isnan(v) ? enc.median : v;
    }
    enc.mean = total / static_cast<double>(splits.train.size());
    double sq = 0.0;
    for (std::size_t idx : splits.train) {
      const double v = raw.continuous[j][idx];
      const double d = (std::isnan(v) ? enc.median : v) - enc.mean;
      sq += d * d;
    }
    enc.stddev = std::max(std::sqrt(sq / static_cast<double>(splits.train.size())), 1e-8);
    schema.continuous.push_back(std::move(enc));
  }
  return schema;
}

Dataset encode(const RawTable& raw, const DatasetSchema& schema) {
  if (raw.categorical.size() != schema.categorical.size() || raw.continuous.size() != schema.continuous.size()) {
    throw DataError("encode: table does not match schema '" + schema.name + "'");
  }
  Dataset data;
  data.rows = raw.rows;
  data.n_categorical = schema.categorical.size();
  data.n_continuous = schema.continuous.size();
  data.cat_ids.resize(data.rows * data.n_categorical);
  data.cont.resize(data.rows * data.n_continuous);
  data.labels.resize(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r) {
    for (std::size_t j = 0; j < data.n_categorical; ++j) {
      data.cat_ids[r * data.n_categorical + j] = schema.categorical[j].encode(raw.categorical[j][r]);
    }
    for (std::size_t j = 0; j < data.n_continuous; ++j) {
      const auto& enc = schema.continuous[j];
      const double v = raw.continuous[j][r];
      data.cont[r * data.n_continuous + j] = ((std::isnan(v) ? enc.median : v) - enc.mean) / enc.stddev;
    }
    data.labels[r] = raw.label_tokens[r] == schema.positive ? 1.0 : 0.0;
  }
  return data;
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  batch.size = indices.size();
  batch.cat_ids.reserve(indices.size() * n_categorical);
  std::vector<double> cont_values;
  cont_values.reserve(indices.size() * n_continuous);
  for (std::size_t idx : indices) {
    if (idx >= rows) throw DataError("gather: row " + std::to_string(idx) + " out of range");
    batch.cat_ids.insert(batch.cat_ids.end(), cat_ids.begin() + static_cast<std::ptrdiff_t>(idx * n_categorical),
                         cat_ids.begin() + static_cast<std::ptrdiff_t>((idx + 1) * n_categorical));
    cont_values.insert(cont_values.end(), cont.begin() + static_cast<std::ptrdiff_t>(idx * n_continuous),
                       cont.begin() + static_cast<std::ptrdiff_t>((idx + 1) * n_continuous));
    batch.labels.push_back(labels[idx]);
  }
  if (n_continuous > 0 && batch.size > 0) batch.cont = Tensor({batch.size, n_continuous}, std::move(cont_values));
  return batch;
}

// ---- reporting -----------------------------------------------------------------

DatasetStats dataset_stats(const RawTable& raw) {
  DatasetStats stats;
  stats.name = raw.schema.name;
  stats.rows = raw.rows;
  stats.categorical = raw.categorical.size();
  stats.continuous = raw.continuous.size();
  stats.total_features = stats.categorical + stats.continuous;
  const auto positives = std::count(raw.label_tokens.begin(), raw.label_tokens.end(), raw.schema.positive);
  stats.positive_percent = 100.0 * static_cast<double>(positives) / static_cast<double>(raw.rows);
  return stats;
}

CorrelationMatrix correlation_matrix(const Dataset& data, const DatasetSchema& schema) {
  if (data.rows < 2) throw DataError("correlation_matrix: need at least 2 rows");
  const std::size_t m = data.n_categorical;
  const std::size_t c = data.n_continuous;
  const std::size_t k = m + c + 1;
  const auto n = static_cast<Eigen::Index>(data.rows);

  CorrelationMatrix result;
  for (const auto& e : schema.categorical) result.names.push_back(e.name);
  for (const auto& e : schema.continuous) result.names.push_back(e.name);
  result.names.push_back(schema.label);

  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    for (std::size_t j = 0; j < m; ++j) x(r, static_cast<Eigen::Index>(j)) = static_cast<double>(data.cat_ids[row * m + j]);
    for (std::size_t j = 0; j < c; ++j) x(r, static_cast<Eigen::Index>(m + j)) = data.cont[row * c + j];
    x(r, static_cast<Eigen::Index>(k - 1)) = data.labels[row];
  }
  // Standardize columns, then R = Z^T Z / n.
  std::vector<bool> constant(k, false);
  for (std::size_t j = 0; j < k; ++j) {
    auto col = x.col(static_cast<Eigen::Index>(j));
    col.array() -= col.mean();
    const double norm = col.norm();
    if (norm == 0.0) {
      constant[j] = true;
      result.warnings.push_back("column '" + result.names[j] + "' has zero variance; correlations set to 0");
      continue;
    }
    col /= norm;
  }
  const Eigen::MatrixXd r = x.transpose() * x;
  result.values.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    result.values[i * k + i] = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      double v = 0.0;
      if (!constant[i] && !constant[j]) {
        v = std::clamp(r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), -1.0, 1.0);
      }
      result.values[i * k + j] = v;
      result.values[j * k + i] = v;
    }
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return result;
}

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& matrix) {
  const std::size_t k = matrix.size();
  out << "feature";
  for (const auto& name : matrix.names) out << ',' << name;
  out << '\n';
  out << std::setprecision(10);
  for (std::size_t i = 0; i < k; ++i) {
    out << matrix.names[i];
    for (std::size_t j = 0; j < k; ++j) out << ',' << matrix.at(i, j);
    out << '\n';
  }
}

}  // namespace gtt
