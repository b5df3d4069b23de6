#include "gtt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gtt/error.hpp"

namespace gtt {

namespace {

constexpr char kMagic[8] = {'G', 'T', 'T', 'C', 'K', 'P', 'T', '1'};
// Stream tags below the kInit stream: upstream and head weights.
constexpr std::uint64_t kUpstreamStream = 11;
constexpr std::uint64_t kHeadStream = 12;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

std::vector<std::size_t> mlp_sizes(const Model& m) {
  std::vector<std::size_t> sizes{m.n_categorical * m.config.dim + m.n_continuous};
  sizes.insert(sizes.end(), m.config.mlp_hidden.begin(), m.config.mlp_hidden.end());
  sizes.push_back(1);
  return sizes;
}

}  // namespace

HeadKind parse_head_kind(std::string_view text) {
  if (text == "gmlp") return HeadKind::kGmlp;
  if (text == "mlp") return HeadKind::kMlp;
  if (text == "none") return HeadKind::kNone;
  throw ConfigError("unknown head kind '" + std::string(text) + "' (expected gmlp, mlp or none)");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kGmlp: return "gmlp";
    case HeadKind::kMlp: return "mlp";
    case HeadKind::kNone: return "none";
  }
  return "?";
}

ContNorm parse_cont_norm(std::string_view text) {
  if (text == "layer") return ContNorm::kLayer;
  if (text == "none") return ContNorm::kNone;
  throw ConfigError("unknown cont_norm '" + std::string(text) + "' (expected layer or none)");
}

std::string to_string(ContNorm kind) { return kind == ContNorm::kLayer ? "layer" : "none"; }

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model: dim must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  if (head == HeadKind::kGmlp) {
    if (gmlp_depth == 0) throw ConfigError("model: gmlp head needs gmlp_depth >= 1");
    if (gmlp_mult == 0) throw ConfigError("model: gmlp_mult must be positive");
    if ((gmlp_width() * gmlp_mult) % 2 != 0) {
      throw ConfigError("model: gmlp hidden width " + std::to_string(gmlp_width() * gmlp_mult) + " must be even");
    }
  }
  if (head == HeadKind::kMlp) {
    for (std::size_t w : mlp_hidden) {
      if (w == 0) throw ConfigError("model: mlp_hidden widths must be positive");
    }
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"head", to_string(c.head)},
          {"transformer_depth", c.transformer_depth},
          {"heads", c.heads},
          {"dim", c.dim},
          {"gmlp_depth", c.gmlp_depth},
          {"gmlp_dim", c.gmlp_dim},
          {"gmlp_mult", c.gmlp_mult},
          {"mlp_hidden", c.mlp_hidden},
          {"activation", to_string(c.activation)},
          {"dropout", c.dropout},
          {"cont_norm", to_string(c.cont_norm)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.head = parse_head_kind(j.at("head").get<std::string>());
  c.transformer_depth = j.at("transformer_depth").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.gmlp_depth = j.at("gmlp_depth").get<std::size_t>();
  c.gmlp_dim = j.at("gmlp_dim").get<std::size_t>();
  c.gmlp_mult = j.at("gmlp_mult").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.cont_norm = parse_cont_norm(j.value("cont_norm", "layer"));
  return c;
}

ParamList Model::upstream_parameters() const {
  ParamList out;
  embeddings.collect(out, "embed");
  for (std::size_t i = 0; i < transformer.size(); ++i) transformer[i].collect(out, "transformer." + std::to_string(i));
  if (cont_norm.gamma.defined()) cont_norm.collect(out, "cont_norm");
  return out;
}

ParamList Model::parameters() const {
  ParamList out = upstream_parameters();
  switch (config.head) {
    case HeadKind::kGmlp:
      if (n_continuous > 0) cont_token.collect(out, "head.cont_token");
      if (adapter.weight.defined()) adapter.collect(out, "head.adapter");
      for (std::size_t i = 0; i < gmlp.size(); ++i) gmlp[i].collect(out, "head.gmlp." + std::to_string(i));
      readout.collect(out, "head.readout");
      break;
    case HeadKind::kMlp:
      mlp.collect(out, "head.mlp");
      break;
    case HeadKind::kNone:
      readout.collect(out, "head.readout");
      break;
  }
  return out;
}

Model build_model(const ModelConfig& config, const DatasetSchema& schema, std::uint64_t seed) {
  const auto vocab = schema.vocab_sizes();
  return build_model(config, vocab, schema.continuous.size(), seed);
}

Model build_model(const ModelConfig& config, std::span<const std::size_t> vocab_sizes, std::size_t n_continuous,
                  std::uint64_t seed) {
  config.validate();
  if (vocab_sizes.empty()) throw ConfigError("model: at least one categorical column is required");

  Model m;
  m.config = config;
  m.n_categorical = vocab_sizes.size();
  m.n_continuous = n_continuous;

  const std::uint64_t base = derive_seed(seed, static_cast<std::uint64_t>(Stream::kInit));
  Rng upstream(derive_seed(base, kUpstreamStream));
  m.embeddings = ColumnEmbeddingTable::init({vocab_sizes.begin(), vocab_sizes.end()}, config.dim, upstream);
  for (std::size_t i = 0; i < config.transformer_depth; ++i) {
    m.transformer.push_back(TransformerLayerParams::init(config.dim, config.heads, config.dropout, upstream));
  }
  if (n_continuous > 0 && config.cont_norm == ContNorm::kLayer) m.cont_norm = LayerNormAffine::init(n_continuous);

  Rng head(derive_seed(base, kHeadStream));
  switch (config.head) {
    case HeadKind::kGmlp: {
      const std::size_t width = config.gmlp_width();
      if (n_continuous > 0) m.cont_token = Linear::init(n_continuous, config.dim, true, head);
      if (width != config.dim) m.adapter = Linear::init(config.dim, width, true, head);
      for (std::size_t i = 0; i < config.gmlp_depth; ++i) {
        m.gmlp.push_back(GmlpBlockParams::init(m.tokens(), width, width * config.gmlp_mult, config.activation,
                                               config.dropout, head));
      }
      m.readout = Linear::init(width, 1, true, head);
      break;
    }
    case HeadKind::kMlp:
      m.mlp = MlpParams::init(mlp_sizes(m), config.activation, config.dropout, head);
      break;
    case HeadKind::kNone:
      m.readout = Linear::init(m.n_categorical * config.dim + n_continuous, 1, true, head);
      break;
  }
  return m;
}

Tensor forward(const Model& model, std::span<const std::int64_t> cat_ids, const Tensor& cont, std::size_t batch,
               const ForwardContext& ctx) {
  const std::size_t m = model.n_categorical;
  const std::size_t c = model.n_continuous;
  const std::size_t d = model.config.dim;
  if (batch == 0) throw ShapeError("forward: empty batch");
  if (cat_ids.size() != batch * m) {
    throw ShapeError("forward: expected " + std::to_string(batch * m) + " categorical ids, got " +
                     std::to_string(cat_ids.size()));
  }
  if (c > 0) {
    if (!cont.defined() || cont.shape() != Shape{batch, c}) {
      throw ShapeError("forward: expected continuous input (" + std::to_string(batch) + ", " + std::to_string(c) +
                       "), got " + (cont.defined() ? shape_str(cont.shape()) : std::string("none")));
    }
    for (double v : cont.values()) {
      if (!std::isfinite(v)) throw DataError("forward: non-finite continuous input");
    }
  }

  Tensor tokens = column_embed(model.embeddings, cat_ids, batch);
  for (const auto& layer : model.transformer) tokens = transformer_layer(layer, tokens, ctx);
  Tensor cont_normed = model.cont_norm.gamma.defined() ? model.cont_norm(cont) : cont;

  switch (model.config.head) {
    case HeadKind::kGmlp: {
      Tensor seq = tokens;
      if (c > 0) {
        Tensor extra = reshape(model.cont_token(cont_normed), {batch, 1, d});
        const Tensor parts[] = {tokens, extra};
        seq = concat(parts, 1);
      }
      if (model.adapter.weight.defined()) seq = model.adapter(seq);
      for (const auto& block : model.gmlp) seq = gmlp_block(block, seq, ctx);
      Tensor pooled = mean_last_dim(transpose_last_two(seq));
      return model.readout(pooled);
    }
    case HeadKind::kMlp:
    case HeadKind::kNone: {
      Tensor features = reshape(tokens, {batch, m * d});
      if (c > 0) {
        const Tensor parts[] = {features, cont_normed};
        features = concat(parts, 1);
      }
      if (model.config.head == HeadKind::kMlp) return mlp_forward(model.mlp, features, ctx);
      return model.readout(features);
    }
  }
  throw Error("forward: unknown head kind");
}

Tensor forward(const Model& model, const Batch& batch, const ForwardContext& ctx) {
  return forward(model, batch.cat_ids, batch.cont, batch.size, ctx);
}

std::size_t param_count(const Model& model) { return count_scalars(model.parameters()); }

std::vector<std::vector<double>> snapshot(const Model& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  ParamList params = model.parameters();
  if (params.size() != values.size()) throw Error("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    if (dst.size() != values[i].size()) throw Error("restore: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

nlohmann::json to_json(const DatasetSchema& schema) {
  nlohmann::json j;
  j["name"] = schema.name;
  j["label"] = schema.label;
  j["positive"] = schema.positive;
  j["categorical"] = nlohmann::json::array();
  for (const auto& e : schema.categorical) j["categorical"].push_back({{"name", e.name}, {"vocab", e.vocab}});
  j["continuous"] = nlohmann::json::array();
  for (const auto& e : schema.continuous) {
    j["continuous"].push_back({{"name", e.name}, {"mean", e.mean}, {"stddev", e.stddev}, {"median", e.median}});
  }
  return j;
}

DatasetSchema dataset_schema_from_json(const nlohmann::json& j) {
  DatasetSchema s;
  s.name = j.at("name").get<std::string>();
  s.label = j.at("label").get<std::string>();
  s.positive = j.at("positive").get<std::string>();
  for (const auto& e : j.at("categorical")) {
    CategoricalEncoder enc;
    enc.name = e.at("name").get<std::string>();
    enc.vocab = e.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < enc.vocab.size(); ++i) enc.index[enc.vocab[i]] = static_cast<std::int64_t>(i);
    s.categorical.push_back(std::move(enc));
  }
  for (const auto& e : j.at("continuous")) {
    s.continuous.push_back(
        {e.at("name").get<std::string>(), e.at("mean").get<double>(), e.at("stddev").get<double>(),
         e.at("median").get<double>()});
  }
  return s;
}

void save_checkpoint(const std::string& path, const Model& model, const DatasetSchema& schema,
                     const nlohmann::json& meta) {
  const ParamList params = model.parameters();
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = to_json(model.config);
  header["schema"] = to_json(schema);
  header["fingerprint"] = schema.fingerprint();
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  for (const auto& p : params) header["params"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    const auto values = p.tensor.values();
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  }
  if (!out) throw Error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(path + ": not a checkpoint file");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(path + ": truncated header");

  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.schema = dataset_schema_from_json(header.at("schema"));
  if (header.at("fingerprint").get<std::uint64_t>() != ck.schema.fingerprint()) {
    throw Error(path + ": schema fingerprint does not match its stored schema");
  }
  ck.meta = header.at("meta");
  ck.model = build_model(model_config_from_json(header.at("config")), ck.schema, 0);

  ParamList params = ck.model.parameters();
  const auto& stored = header.at("params");
  if (stored.size() != params.size()) throw Error(path + ": parameter list does not match the config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stored[i].at("name").get<std::string>() != params[i].name ||
        stored[i].at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw Error(path + ": unexpected parameter " + stored[i].at("name").get<std::string>());
    }
    auto dst = params[i].tensor.mutable_values();
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes()));
  }
  if (!in) throw Error(path + ": truncated parameter data");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(path + ": trailing bytes after parameters");
  return ck;
}

}  // namespace gtt
