#pragma once

#include <string>
#include <vector>

#include "gtt/model.hpp"
#include "gtt/train.hpp"

namespace gtt {

// Sectioned key/value run description:
//
//   [data]
//   csv = ../data/blastchar.csv
//   schema = ../schemas/blastchar.schema
//   [model]
//   head = gmlp
//   ...
//   [train]
//   lr = 0.005
//   [run]
//   seeds = 0, 1, 2, 3, 4
//   output = blastchar-gmlp
//
// Relative paths are resolved against the config file's directory.
struct RunConfig {
  std::string csv;
  std::string schema;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool fixed_split = false;
  std::uint64_t split_seed = 0;
  std::size_t parallel = 1;
  std::string output;  // relative outputs land under the output root

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Applies "section.key=value" style overrides in order, after the file.
struct ConfigOverride {
  std::string section;
  std::string key;
  std::string value;
};

RunConfig parse_run_config(const std::string& text, const std::string& source, const std::string& base_dir,
                           const std::vector<ConfigOverride>& overrides = {});
// Throws ConfigError naming the path when it cannot be read; also checks that
// the referenced csv and schema exist.
RunConfig load_run_config(const std::string& path, const std::vector<ConfigOverride>& overrides = {});
std::string canonical_text(const RunConfig& config);

// Validates paths and values; parse_run_config calls it.
void check_run_config(const RunConfig& config, const std::string& source);

}  // namespace gtt
