#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtt/data.hpp"
#include "gtt/nn.hpp"

namespace gtt {

enum class HeadKind { kGmlp, kMlp, kNone };
// How the z-scored continuous inputs are normalized inside the model.
enum class ContNorm { kLayer, kNone };

HeadKind parse_head_kind(std::string_view text);
std::string to_string(HeadKind kind);
ContNorm parse_cont_norm(std::string_view text);
std::string to_string(ContNorm kind);

struct ModelConfig {
  HeadKind head = HeadKind::kGmlp;
  std::size_t transformer_depth = 2;  // N
  std::size_t heads = 4;              // h
  std::size_t dim = 16;               // d, column embedding width
  std::size_t gmlp_depth = 2;         // L
  std::size_t gmlp_dim = 0;           // d_model of the gMLP stack; 0 means d
  std::size_t gmlp_mult = 4;          // d_hidden = gmlp_mult * d_model
  std::vector<std::size_t> mlp_hidden = {64, 32};
  Activation activation;
  double dropout = 0.0;
  ContNorm cont_norm = ContNorm::kLayer;

  std::size_t gmlp_width() const { return gmlp_dim == 0 ? dim : gmlp_dim; }
  // Throws ConfigError on the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Model {
  ModelConfig config;
  std::size_t n_categorical = 0;
  std::size_t n_continuous = 0;

  ColumnEmbeddingTable embeddings;
  std::vector<TransformerLayerParams> transformer;
  LayerNormAffine cont_norm;  // over the c continuous inputs; unset for ContNorm::kNone

  // gmlp head
  Linear cont_token;  // c -> d, the extra continuous token
  Linear adapter;     // d -> gmlp d_model, only when they differ
  std::vector<GmlpBlockParams> gmlp;
  Linear readout;  // gmlp d_model -> 1, or flattened features -> 1 for "none"

  // mlp head
  MlpParams mlp;

  std::size_t tokens() const { return n_categorical + (config.head == HeadKind::kGmlp && n_continuous > 0); }

  // Every trainable tensor exactly once, in a fixed order.
  ParamList parameters() const;
  // Embeddings, transformer stack and continuous norm: the part shared by
  // every head kind.
  ParamList upstream_parameters() const;
};

// Upstream weights and head weights draw from separate streams of `seed`, so
// two models that differ only in head kind share bit-identical upstream
// initial values.
Model build_model(const ModelConfig& config, const DatasetSchema& schema, std::uint64_t seed);
Model build_model(const ModelConfig& config, std::span<const std::size_t> vocab_sizes,
                  std::size_t n_continuous, std::uint64_t seed);

// cat_ids (batch, m) row-major; cont (batch, c), ignored when c == 0.
// Returns logits (batch, 1).
Tensor forward(const Model& model, std::span<const std::int64_t> cat_ids, const Tensor& cont,
               std::size_t batch, const ForwardContext& ctx);
Tensor forward(const Model& model, const Batch& batch, const ForwardContext& ctx);

std::size_t param_count(const Model& model);

// Parameter values only; used to snapshot and restore the best epoch.
std::vector<std::vector<double>> snapshot(const Model& model);
void restore(Model& model, const std::vector<std::vector<double>>& values);

nlohmann::json to_json(const DatasetSchema& schema);
DatasetSchema dataset_schema_from_json(const nlohmann::json& j);

struct Checkpoint {
  Model model;
  DatasetSchema schema;
  nlohmann::json meta;  // free-form provenance (split seed, epoch, ...)
};

// Layout: "GTTCKPT1", u64 header length, JSON header, then every parameter's
// values as little-endian f64 in parameters() order.
void save_checkpoint(const std::string& path, const Model& model, const DatasetSchema& schema,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gtt
