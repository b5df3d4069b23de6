#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gtt/data.hpp"
#include "gtt/metrics.hpp"
#include "gtt/model.hpp"
#include "gtt/train.hpp"

namespace gtt {

struct EvalResult {
  std::string model_id;
  std::string dataset;
  std::vector<std::uint64_t> seeds;  // seeds that produced an AUROC
  std::vector<double> aurocs;
  std::vector<std::uint64_t> diverged_seeds;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one value
};

// Builds the result from per-seed outcomes; std::nullopt marks a diverged
// run. Throws Error when more than half diverged.
EvalResult aggregate(std::string model_id, std::string dataset, const std::vector<std::uint64_t>& seeds,
                     const std::vector<std::optional<double>>& aurocs);

enum class ModelKind { kNeural, kLogistic };

struct RunSpec {
  std::string id;
  ModelKind kind = ModelKind::kNeural;
  ModelConfig model;
  TrainConfig train;  // train.seed is replaced by the run seed
  // When set, every seed reuses the split drawn from split_seed and only
  // init, shuffling and dropout vary.
  bool fixed_split = false;
  std::uint64_t split_seed = 0;
  double l2 = 1.0;  // logistic regression only
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<double> test_auroc;  // empty when training diverged
  TrainReport report;
  std::size_t param_count = 0;
  std::vector<RocPoint> roc;
};

// One full split -> fit encoders -> train -> select -> test pass.
SeedOutcome run_seed(const RawTable& raw, const RunSpec& spec, std::uint64_t seed);

// Runs each seed (up to `parallel` at once) and aggregates. Needs >= 2 seeds.
EvalResult mean_auroc_over_seeds(const RawTable& raw, const RunSpec& spec, const std::vector<std::uint64_t>& seeds,
                                 std::size_t parallel = 1, std::vector<SeedOutcome>* outcomes = nullptr);

// Calls fn(i) for i in [0, n) on up to `parallel` threads. The first
// exception is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t parallel, const std::function<void(std::size_t)>& fn);

std::vector<std::uint64_t> default_seeds(std::size_t count = 5);

struct GainRow {
  std::string dataset;
  std::string model;
  std::string baseline;
  double model_mean = 0.0;
  double baseline_mean = 0.0;
  double gain_points = 0.0;  // 100 * (model_mean - baseline_mean)
  std::size_t pairs = 0;     // seeds shared by both results
  double paired_mean = 0.0;  // points, over shared seeds
  double paired_sd = 0.0;    // points, sample sd over shared seeds
};

// results[0] is the model under test; each other result is a baseline.
// Throws Error when the datasets differ or fewer than two results are given.
std::vector<GainRow> compare_models(const std::vector<EvalResult>& results);

void write_gain_csv(std::ostream& out, const std::vector<GainRow>& rows);
void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points);
void write_eval_csv(std::ostream& out, const std::vector<EvalResult>& results);

}  // namespace gtt
