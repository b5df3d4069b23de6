#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gtt/rng.hpp"
#include "gtt/tensor.hpp"

namespace gtt {

enum class ActivationKind { kRelu, kGelu, kSelu, kLeakyRelu };

struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  double slope = 0.01;  // leaky_relu only

  friend bool operator==(const Activation&, const Activation&) = default;
};

// "relu", "gelu", "selu", "leaky_relu" or "leaky_relu:<slope>".
Activation parse_activation(std::string_view text);
std::string to_string(const Activation& activation);
Tensor activate(const Tensor& x, const Activation& activation);

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_scalars(const ParamList& params);

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // dropout masks; required when train is set
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out), may be undefined

  // Kaiming-uniform weights, zero bias.
  static Linear init(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNormAffine {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormAffine init(std::size_t width);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// One embedding row per (column, category) plus one "unseen" row per column,
// all stacked in a single table. Column j owns rows
// [offsets[j], offsets[j] + vocab_sizes[j]]; the last of those is the unseen
// row, addressed by id == vocab_sizes[j].
struct ColumnEmbeddingTable {
  std::vector<std::size_t> vocab_sizes;
  std::vector<std::size_t> offsets;
  std::size_t dim = 0;
  Tensor table;

  static ColumnEmbeddingTable init(std::vector<std::size_t> vocab_sizes, std::size_t dim, Rng& rng);
  std::size_t columns() const { return vocab_sizes.size(); }
  std::int64_t unseen_id(std::size_t column) const { return static_cast<std::int64_t>(vocab_sizes[column]); }
  void collect(ParamList& out, const std::string& prefix) const;
};

// cat_ids is row-major (batch, m). Output (batch, m, d).
Tensor column_embed(const ColumnEmbeddingTable& table, std::span<const std::int64_t> cat_ids, std::size_t batch);

struct AttentionParams {
  std::size_t heads = 1;
  Tensor w_q, w_k, w_v, w_o;  // each (d, d)

  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t dim() const { return w_q.shape()[0]; }
  void collect(ParamList& out, const std::string& prefix) const;
};

// Scaled dot-product attention per head on (batch, m, d) tokens. When
// `weights` is non-null it receives one (batch, m, m) tensor per head.
Tensor multi_head_attention(const AttentionParams& params, const Tensor& tokens,
                            std::vector<Tensor>* weights = nullptr);

struct TransformerLayerParams {
  AttentionParams attention;
  LayerNormAffine attention_norm;
  LayerNormAffine ffn_norm;
  Linear ffn_in;   // d -> 4d
  Linear ffn_out;  // 4d -> d
  double dropout = 0.0;

  static TransformerLayerParams init(std::size_t dim, std::size_t heads, double dropout, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-norm encoder layer:
//   t1  = x  + Dropout(MHA(LN(x)))
//   out = t1 + Dropout(FFN(LN(t1)))
Tensor transformer_layer(const TransformerLayerParams& params, const Tensor& tokens, const ForwardContext& ctx);

struct SpatialGatingParams {
  LayerNormAffine norm;  // over the gate half of the channels
  Tensor weight;         // (n, n), uniform in [-1e-3, 1e-3] at init
  Tensor bias;           // (n, 1), ones at init

  static SpatialGatingParams init(std::size_t tokens, std::size_t gate_channels, Rng& rng);
  std::size_t tokens() const { return weight.shape()[0]; }
  void collect(ParamList& out, const std::string& prefix) const;
};

// z: (batch, n, d_h) with d_h even. Splits channels into (res, gate) halves
// and returns res * (W . LN(gate) + b), mixing along the token axis.
Tensor spatial_gating(const SpatialGatingParams& params, const Tensor& z);

struct GmlpBlockParams {
  LayerNormAffine norm;
  Linear proj_in;   // U: d_model -> d_hidden
  Linear proj_out;  // V: d_hidden / 2 -> d_model
  Activation activation;
  SpatialGatingParams gating;
  double dropout = 0.0;

  static GmlpBlockParams init(std::size_t tokens, std::size_t d_model, std::size_t d_hidden,
                              Activation activation, double dropout, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// out = x + V(SGU(Dropout(act(U(LN(x)))))).
Tensor gmlp_block(const GmlpBlockParams& params, const Tensor& x, const ForwardContext& ctx);

struct MlpParams {
  std::vector<Linear> layers;
  Activation activation;
  double dropout = 0.0;

  // sizes = {input, hidden..., 1}.
  static MlpParams init(const std::vector<std::size_t>& sizes, Activation activation, double dropout, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// Affine layers with the activation (and dropout) between them; the last
// layer emits the raw logit.
Tensor mlp_forward(const MlpParams& params, const Tensor& x, const ForwardContext& ctx);

}  // namespace gtt
