#include "gtt/nn.hpp"

#include <cmath>
#include <sstream>

#include "gtt/error.hpp"

namespace gtt {

namespace {

constexpr double kEmbeddingStd = 0.05;
constexpr double kGateInitRange = 1e-3;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor({fan_in, fan_out}, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.dim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Activation parse_activation(std::string_view text) {
  if (text == "relu") return {ActivationKind::kRelu, 0.01};
  if (text == "gelu") return {ActivationKind::kGelu, 0.01};
  if (text == "selu") return {ActivationKind::kSelu, 0.01};
  if (text == "leaky_relu") return {ActivationKind::kLeakyRelu, 0.01};
  constexpr std::string_view prefix = "leaky_relu:";
  if (text.starts_with(prefix)) {
    const std::string rest(text.substr(prefix.size()));
    std::istringstream is(rest);
    double slope = 0.0;
    if (is >> slope && is.eof() && slope >= 0.0) return {ActivationKind::kLeakyRelu, slope};
  }
  throw ConfigError("unknown activation '" + std::string(text) + "'");
}

std::string to_string(const Activation& activation) {
  switch (activation.kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kGelu: return "gelu";
    case ActivationKind::kSelu: return "selu";
    case ActivationKind::kLeakyRelu: {
      std::ostringstream os;
      os << "leaky_relu:" << activation.slope;
      return os.str();
    }
  }
  return "relu";
}

Tensor activate(const Tensor& x, const Activation& activation) {
  switch (activation.kind) {
    case ActivationKind::kRelu: return relu(x);
    case ActivationKind::kGelu: return gelu(x);
    case ActivationKind::kSelu: return selu(x);
    case ActivationKind::kLeakyRelu: return leaky_relu(x, activation.slope);
  }
  throw Error("activate: bad activation kind");
}

std::size_t count_scalars(const ParamList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

// ---- Linear / LayerNorm ------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Linear layer;
  layer.weight = kaiming_uniform(in, out, rng);
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.dim() == 0 || x.shape().back() != weight.shape()[0]) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul(x.dim() == 1 ? reshape(x, {1, x.numel()}) : x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNormAffine LayerNormAffine::init(std::size_t width) {
  return {Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true), 1e-5};
}

Tensor LayerNormAffine::operator()(const Tensor& x) const {
  return add(mul(layer_norm(x, eps), gamma), beta);
}

void LayerNormAffine::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

// ---- column embeddings -------------------------------------------------------

ColumnEmbeddingTable ColumnEmbeddingTable::init(std::vector<std::size_t> vocab_sizes, std::size_t dim, Rng& rng) {
  if (dim == 0) throw ConfigError("column embedding: dim must be positive");
  ColumnEmbeddingTable t;
  t.dim = dim;
  std::size_t rows = 0;
  for (std::size_t v : vocab_sizes) {
    t.offsets.push_back(rows);
    rows += v + 1;
  }
  t.vocab_sizes = std::move(vocab_sizes);
  std::vector<double> values(std::max<std::size_t>(rows, 1) * dim);
  for (auto& v : values) v = rng.normal(0.0, kEmbeddingStd);
  t.table = Tensor({std::max<std::size_t>(rows, 1), dim}, std::move(values), true);
  return t;
}

void ColumnEmbeddingTable::collect(ParamList& out, const std::string& prefix) const {
  if (!vocab_sizes.empty()) out.push_back({prefix + ".table", table});
}

Tensor column_embed(const ColumnEmbeddingTable& table, std::span<const std::int64_t> cat_ids, std::size_t batch) {
  const std::size_t m = table.columns();
  if (m == 0) throw ShapeError("column_embed: table has no columns");
  if (cat_ids.size() != batch * m) {
    throw ShapeError("column_embed: expected " + std::to_string(batch) + "x" + std::to_string(m) + " ids, got " +
                     std::to_string(cat_ids.size()));
  }
  std::vector<std::int64_t> rows(cat_ids.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::int64_t id = cat_ids[b * m + j];
      if (id < 0 || id > table.unseen_id(j)) {
        throw ShapeError("column_embed: id " + std::to_string(id) + " out of range for column " + std::to_string(j) +
                         " (vocab " + std::to_string(table.vocab_sizes[j]) + ")");
      }
      rows[b * m + j] = static_cast<std::int64_t>(table.offsets[j]) + id;
    }
  }
  return embedding_lookup(table.table, rows, {batch, m});
}

// ---- attention ---------------------------------------------------------------

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.w_q = kaiming_uniform(dim, dim, rng);
  p.w_k = kaiming_uniform(dim, dim, rng);
  p.w_v = kaiming_uniform(dim, dim, rng);
  p.w_o = kaiming_uniform(dim, dim, rng);
  return p;
}

void AttentionParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".w_v", w_v});
  out.push_back({prefix + ".w_o", w_o});
}

Tensor multi_head_attention(const AttentionParams& params, const Tensor& tokens, std::vector<Tensor>* weights) {
  require_rank(tokens, 3, "multi_head_attention");
  const std::size_t d = params.dim();
  if (tokens.shape()[2] != d) {
    throw ShapeError("multi_head_attention: tokens " + shape_str(tokens.shape()) + " do not match dim " +
                     std::to_string(d));
  }
  const std::size_t head_dim = d / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::vector<std::size_t> sizes(params.heads, head_dim);

  auto q = split(matmul(tokens, params.w_q), -1, sizes);
  auto k = split(matmul(tokens, params.w_k), -1, sizes);
  auto v = split(matmul(tokens, params.w_v), -1, sizes);
  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor scores = scalar_mul(matmul(q[h], transpose_last_two(k[h])), scale);
    Tensor attn = softmax_last_dim(scores);
    if (weights) weights->push_back(attn);
    heads.push_back(matmul(attn, v[h]));
  }
  Tensor merged = params.heads == 1 ? heads[0] : concat(heads, -1);
  return matmul(merged, params.w_o);
}

TransformerLayerParams TransformerLayerParams::init(std::size_t dim, std::size_t heads, double dropout, Rng& rng) {
  TransformerLayerParams p;
  p.attention = AttentionParams::init(dim, heads, rng);
  p.attention_norm = LayerNormAffine::init(dim);
  p.ffn_norm = LayerNormAffine::init(dim);
  p.ffn_in = Linear::init(dim, 4 * dim, true, rng);
  p.ffn_out = Linear::init(4 * dim, dim, true, rng);
  p.dropout = dropout;
  return p;
}

void TransformerLayerParams::collect(ParamList& out, const std::string& prefix) const {
  attention.collect(out, prefix + ".attention");
  attention_norm.collect(out, prefix + ".attention_norm");
  ffn_norm.collect(out, prefix + ".ffn_norm");
  ffn_in.collect(out, prefix + ".ffn_in");
  ffn_out.collect(out, prefix + ".ffn_out");
}

Tensor transformer_layer(const TransformerLayerParams& params, const Tensor& tokens, const ForwardContext& ctx) {
  Tensor attended = multi_head_attention(params.attention, params.attention_norm(tokens));
  Tensor t1 = add(tokens, dropout(attended, params.dropout, ctx.train, ctx.rng));
  Tensor hidden = gelu(params.ffn_in(params.ffn_norm(t1)));
  Tensor ffn = params.ffn_out(dropout(hidden, params.dropout, ctx.train, ctx.rng));
  return add(t1, dropout(ffn, params.dropout, ctx.train, ctx.rng));
}

// ---- gMLP --------------------------------------------------------------------

SpatialGatingParams SpatialGatingParams::init(std::size_t tokens, std::size_t gate_channels, Rng& rng) {
  SpatialGatingParams p;
  p.norm = LayerNormAffine::init(gate_channels);
  p.weight = uniform_tensor({tokens, tokens}, kGateInitRange, rng);
  p.bias = Tensor::full({tokens, 1}, 1.0, true);
  return p;
}

void SpatialGatingParams::collect(ParamList& out, const std::string& prefix) const {
  norm.collect(out, prefix + ".norm");
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor spatial_gating(const SpatialGatingParams& params, const Tensor& z) {
  require_rank(z, 3, "spatial_gating");
  const std::size_t channels = z.shape()[2];
  if (channels % 2 != 0) {
    throw ShapeError("spatial_gating: channel count " + std::to_string(channels) + " must be even");
  }
  if (z.shape()[1] != params.tokens()) {
    throw ShapeError("spatial_gating: input " + shape_str(z.shape()) + " does not match " +
                     std::to_string(params.tokens()) + " tokens");
  }
  const std::vector<std::size_t> halves{channels / 2, channels / 2};
  auto parts = split(z, -1, halves);
  Tensor gate = add(matmul(params.weight, params.norm(parts[1])), params.bias);
  return mul(parts[0], gate);
}

GmlpBlockParams GmlpBlockParams::init(std::size_t tokens, std::size_t d_model, std::size_t d_hidden,
                                      Activation activation, double dropout, Rng& rng) {
  if (d_hidden == 0 || d_hidden % 2 != 0) {
    throw ConfigError("gmlp: hidden width " + std::to_string(d_hidden) + " must be even and positive");
  }
  GmlpBlockParams p;
  p.norm = LayerNormAffine::init(d_model);
  p.proj_in = Linear::init(d_model, d_hidden, true, rng);
  p.proj_out = Linear::init(d_hidden / 2, d_model, true, rng);
  p.activation = activation;
  p.gating = SpatialGatingParams::init(tokens, d_hidden / 2, rng);
  p.dropout = dropout;
  return p;
}

void GmlpBlockParams::collect(ParamList& out, const std::string& prefix) const {
  norm.collect(out, prefix + ".norm");
  proj_in.collect(out, prefix + ".proj_in");
  proj_out.collect(out, prefix + ".proj_out");
  gating.collect(out, prefix + ".gating");
}

Tensor gmlp_block(const GmlpBlockParams& params, const Tensor& x, const ForwardContext& ctx) {
  require_rank(x, 3, "gmlp_block");
  Tensor z = activate(params.proj_in(params.norm(x)), params.activation);
  z = dropout(z, params.dropout, ctx.train, ctx.rng);
  return add(x, params.proj_out(spatial_gating(params.gating, z)));
}

// ---- MLP ---------------------------------------------------------------------

MlpParams MlpParams::init(const std::vector<std::size_t>& sizes, Activation activation, double dropout, Rng& rng) {
  if (sizes.size() < 2 || sizes.back() != 1) throw ConfigError("mlp: layer sizes must end in 1");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ConfigError("mlp: layer sizes must be positive");
    p.layers.push_back(Linear::init(sizes[i], sizes[i + 1], true, rng));
  }
  p.activation = activation;
  p.dropout = dropout;
  return p;
}

void MlpParams::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layers." + std::to_string(i));
}

Tensor mlp_forward(const MlpParams& params, const Tensor& x, const ForwardContext& ctx) {
  require_rank(x, 2, "mlp_forward");
  Tensor h = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    h = params.layers[i](h);
    if (i + 1 < params.layers.size()) {
      h = dropout(activate(h, params.activation), params.dropout, ctx.train, ctx.rng);
    }
  }
  return h;
}

}  // namespace gtt
