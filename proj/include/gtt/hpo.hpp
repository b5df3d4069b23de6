#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtt/data.hpp"
#include "gtt/eval.hpp"

namespace gtt {

// Axis values default to the full published grid. The dims axis sets the
// column embedding width and the head width together; depth is the number
// of head layers (gMLP blocks, or hidden MLP layers).
struct GridSpec {
  std::vector<double> lr = {0.05, 0.01, 0.005, 0.001, 0.0005};
  std::vector<std::size_t> step = {5, 10, 15};
  std::vector<double> gamma = {0.1, 0.2, 0.5};
  std::vector<double> dropout = {0.0, 0.1, 0.2, 0.5};
  std::vector<std::size_t> heads = {4, 8, 12, 16};
  std::vector<std::size_t> depth = {2, 4, 6, 8};
  std::vector<std::size_t> dims = {8, 16, 32, 64, 128, 256};
  std::vector<HeadKind> head = {HeadKind::kGmlp};
  std::vector<Activation> activation = {Activation{}};

  // Held fixed across the grid.
  ModelConfig base_model;
  TrainConfig base_train;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool fixed_split = false;
  std::uint64_t split_seed = 0;
  // When set, trials run in a seeded random order instead of enumeration
  // order (for budgeted sampling).
  std::optional<std::uint64_t> order_seed;

  void validate() const;
  std::size_t size() const;
  std::uint64_t hash() const;
};

// Plain-text key/value file, one axis per line:
//   lr = 0.01, 0.001
//   head = gmlp, mlp
// Fixed keys: transformer_depth, gmlp_mult, max_epochs, patience,
// batch_size, seeds, fixed_split, split_seed, order_seed, cont_norm.
GridSpec parse_grid_spec(const std::string& text, const std::string& source = "<grid>");
GridSpec load_grid_spec(const std::string& path);
std::string canonical_text(const GridSpec& spec);

struct GridPoint {
  std::size_t index = 0;  // position in enumeration order
  ModelConfig model;
  TrainConfig train;
  bool valid = true;  // false when dims is not divisible by heads
  std::string config_hash;
};

// Lexicographic over (head, activation, lr, step, gamma, dropout, heads,
// depth, dims), last axis fastest. Invalid combinations are kept and marked.
std::vector<GridPoint> enumerate_grid(const GridSpec& spec);

enum class TrialStatus { kOk, kDiverged, kSkipped };
std::string to_string(TrialStatus status);
TrialStatus parse_trial_status(std::string_view text);

struct TrialResult {
  std::size_t index = 0;
  std::string config_hash;
  nlohmann::json config;
  TrialStatus status = TrialStatus::kOk;
  std::vector<std::uint64_t> seeds;
  std::vector<double> aurocs;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::size_t> epochs;  // per seed
  std::size_t param_count = 0;
  std::string message;
  double wall_seconds = 0.0;  // kept out of the trial log

  nlohmann::json to_record() const;
  static TrialResult from_record(const nlohmann::json& j);
};

TrialResult run_trial(const GridPoint& point, const GridSpec& spec, const RawTable& raw);

struct GridOptions {
  std::string log_path;        // empty: no log
  bool resume = false;
  std::size_t budget = 0;      // max ok/diverged trials this call; 0 = no limit
  std::size_t parallel = 1;    // concurrent trials
  std::ostream* progress = nullptr;
};

struct GridOutcome {
  std::vector<TrialResult> trials;  // enumeration order; includes resumed ones
  std::optional<std::size_t> best;  // index into trials
  std::size_t grid_size = 0;
  std::size_t run = 0;       // ok + diverged
  std::size_t skipped = 0;
  std::size_t remaining = 0;
};

GridOutcome run_grid(const GridSpec& spec, const RawTable& raw, const GridOptions& options);

// Max mean AUROC, then fewer parameters, then earlier enumeration index.
std::optional<std::size_t> select_best(const std::vector<TrialResult>& trials);

// Reads a trial log (header line plus trial records).
std::vector<TrialResult> read_trial_log(const std::string& path, std::uint64_t* spec_hash = nullptr);

// Best mean AUROC per (head, dims), written as CSV.
void write_dim_curve_csv(std::ostream& out, const std::vector<TrialResult>& trials);

}  // namespace gtt
