#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtt/data.hpp"
#include "gtt/model.hpp"

namespace gtt {

struct TrainConfig {
  double lr = 0.005;    // alpha
  double gamma = 0.5;   // decay factor
  std::size_t step = 10;  // decay every `step` epochs
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;  // shuffling and dropout

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Mean of log(1 + exp(-|z|)) + max(z, 0) - z*y over the batch. logits may be
// (batch, 1) or (batch).
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);

// lr * gamma^floor(epoch / step), epoch counted from 0.
double lr_at_epoch(const TrainConfig& config, std::size_t epoch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Reads each parameter's grad buffer and updates its values in place.
// Throws DivergenceError, naming the parameter, on a non-finite gradient.
void adam_step(const ParamList& params, AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double val_auroc = 0.0;
  double lr = 0.0;
};

enum class StopReason { kEarlyStop, kMaxEpochs, kDiverged };
std::string to_string(StopReason reason);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch completed
  double best_val_auroc = 0.0;
  StopReason stop_reason = StopReason::kMaxEpochs;
  std::string message;  // divergence diagnostics

  bool diverged() const { return stop_reason == StopReason::kDiverged; }
};

nlohmann::json to_json(const EpochRecord& record);

// Logits in eval mode for the given rows.
std::vector<double> predict(const Model& model, const Dataset& data, std::span<const std::size_t> rows,
                            std::size_t batch_size = 512);

// Scores the model after each epoch; epochs are 1-based.
using ValidationScorer = std::function<double(const Model& model, std::size_t epoch)>;

// Mini-batch Adam with step decay. After each epoch the scorer (validation
// AUROC by default) decides improvement; the best parameters are restored
// before returning. Metric records are appended to `metrics` when given.
TrainReport train_loop(Model& model, const Dataset& data, const Splits& splits, const TrainConfig& config,
                       std::ostream* metrics = nullptr);
TrainReport train_loop(Model& model, const Dataset& data, const Splits& splits, const TrainConfig& config,
                       const ValidationScorer& scorer, std::ostream* metrics = nullptr);

}  // namespace gtt
