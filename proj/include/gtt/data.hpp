#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gtt/error.hpp"
#include "gtt/tensor.hpp"

namespace gtt {

class DataFileError : public DataError {
 public:
  enum class Kind { kMissingFile, kEmptyFile, kMissingColumn, kUndeclaredColumn, kBadValue, kMalformed };
  DataFileError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Per-dataset column typing, read from a plain-text key/value file:
//
//   name        = blastchar
//   label       = Churn
//   positive    = Yes
//   categorical = gender, SeniorCitizen, ...
//   continuous  = MonthlyCharges, TotalCharges
//   ignore      = customerID
//   delimiter   = ,
//   missing     = ?, NA
//
// Lines starting with '#' are comments. Every CSV column must be listed
// under exactly one of label/categorical/continuous/ignore.
struct SchemaFile {
  std::string name;
  std::string label;
  std::string positive;
  std::vector<std::string> categorical;
  std::vector<std::string> continuous;
  std::vector<std::string> ignore;
  char delimiter = ',';
  std::vector<std::string> missing = {"", "?", "NA"};
};

SchemaFile parse_schema_text(const std::string& text, const std::string& source = "<schema>");
SchemaFile load_schema_file(const std::string& path);
std::string canonical_text(const SchemaFile& schema);

inline constexpr const char* kMissingCategory = "__missing__";

// Typed columns straight from the CSV; nothing fitted yet.
struct RawTable {
  SchemaFile schema;
  std::size_t rows = 0;
  std::vector<std::vector<std::string>> categorical;  // [column][row]; missing -> kMissingCategory
  std::vector<std::vector<double>> continuous;        // [column][row]; missing -> NaN
  std::vector<std::string> label_tokens;
};

// RFC-4180 fields; unquoted fields are whitespace-trimmed.
std::vector<std::vector<std::string>> parse_csv_records(std::istream& in, char delimiter);

RawTable load_csv(const std::string& path, const SchemaFile& schema);
RawTable parse_csv(std::istream& in, const SchemaFile& schema, const std::string& source = "<csv>");

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// Seeded shuffle; train = floor(0.65 n), validation = floor(0.15 n),
// test = remainder. Requires n >= 20.
Splits split_indices(std::size_t n_rows, std::uint64_t seed);

struct CategoricalEncoder {
  std::string name;
  std::vector<std::string> vocab;  // sorted; id i <-> vocab[i]
  std::unordered_map<std::string, std::int64_t> index;

  std::int64_t unseen_id() const { return static_cast<std::int64_t>(vocab.size()); }
  std::int64_t encode(const std::string& value) const;
};

struct ContinuousEncoder {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;
  double median = 0.0;  // fills missing values before scaling
};

// Fitted on training rows only.
struct DatasetSchema {
  std::string name;
  std::string label;
  std::string positive;
  std::vector<CategoricalEncoder> categorical;
  std::vector<ContinuousEncoder> continuous;

  std::vector<std::size_t> vocab_sizes() const;
  // Hash of the column layout (names, kinds, label, positive token); equal
  // for every fit of the same schema file.
  std::uint64_t fingerprint() const;
};

std::uint64_t layout_fingerprint(const SchemaFile& schema);

struct Batch {
  std::size_t size = 0;
  std::vector<std::int64_t> cat_ids;  // (size, m) row-major
  Tensor cont;                        // (size, c); undefined when c == 0
  std::vector<double> labels;
};

struct Dataset {
  std::size_t rows = 0;
  std::size_t n_categorical = 0;
  std::size_t n_continuous = 0;
  std::vector<std::int64_t> cat_ids;  // (rows, m)
  std::vector<double> cont;           // (rows, c), z-scored
  std::vector<double> labels;         // 0 or 1

  Batch gather(std::span<const std::size_t> indices) const;
};

DatasetSchema fit_encoders(const RawTable& raw, const Splits& splits);
Dataset encode(const RawTable& raw, const DatasetSchema& schema);

struct DatasetStats {
  std::string name;
  std::size_t rows = 0;
  std::size_t total_features = 0;
  std::size_t categorical = 0;
  std::size_t continuous = 0;
  double positive_percent = 0.0;
};

DatasetStats dataset_stats(const RawTable& raw);

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<double> values;  // (k, k) row-major
  std::vector<std::string> warnings;

  std::size_t size() const { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
};

// Pearson correlation over categorical ids (as integers), continuous values
// and the label, in that order. Zero-variance columns correlate 0 with
// everything else and add a warning.
CorrelationMatrix correlation_matrix(const Dataset& data, const DatasetSchema& schema);
void write_correlation_csv(std::ostream& out, const CorrelationMatrix& matrix);

}  // namespace gtt
