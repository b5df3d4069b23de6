#include "gtt/config.hpp"

#include <filesystem>
#include <sstream>

#include "gtt/error.hpp"
#include "gtt/kv.hpp"

namespace fs = std::filesystem;

namespace gtt {

namespace {

// Absolute, so the canonical copy written next to run outputs still points at
// the same files.
std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
  return fs::absolute(p).lexically_normal().string();
}

void apply(RunConfig& c, const KvDocument& doc, const KvEntry& e, const std::string& base_dir) {
  const std::string& s = e.section;
  const std::string& k = e.key;
  auto sizes = [&] {
    std::vector<std::size_t> v;
    for (const auto& t : kv_list(e)) v.push_back(kv_uint(doc, e, t));
    return v;
  };
  try {
    if (s == "data" && k == "csv") c.csv = resolve(base_dir, e.value);
    else if (s == "data" && k == "schema") c.schema = resolve(base_dir, e.value);
    else if (s == "model" && k == "head") c.model.head = parse_head_kind(e.value);
    else if (s == "model" && k == "transformer_depth") c.model.transformer_depth = kv_uint(doc, e);
    else if (s == "model" && k == "heads") c.model.heads = kv_uint(doc, e);
    else if (s == "model" && k == "dim") c.model.dim = kv_uint(doc, e);
    else if (s == "model" && k == "gmlp_depth") c.model.gmlp_depth = kv_uint(doc, e);
    else if (s == "model" && k == "gmlp_dim") c.model.gmlp_dim = kv_uint(doc, e);
    else if (s == "model" && k == "gmlp_mult") c.model.gmlp_mult = kv_uint(doc, e);
    else if (s == "model" && k == "mlp_hidden") c.model.mlp_hidden = sizes();
    else if (s == "model" && k == "activation") c.model.activation = parse_activation(e.value);
    else if (s == "model" && k == "dropout") c.model.dropout = kv_double(doc, e);
    else if (s == "model" && k == "cont_norm") c.model.cont_norm = parse_cont_norm(e.value);
    else if (s == "train" && k == "lr") c.train.lr = kv_double(doc, e);
    else if (s == "train" && k == "gamma") c.train.gamma = kv_double(doc, e);
    else if (s == "train" && k == "step") c.train.step = kv_uint(doc, e);
    else if (s == "train" && k == "patience") c.train.patience = kv_uint(doc, e);
    else if (s == "train" && k == "max_epochs") c.train.max_epochs = kv_uint(doc, e);
    else if (s == "train" && k == "batch_size") c.train.batch_size = kv_uint(doc, e);
    else if (s == "run" && k == "seeds") {
      c.seeds.clear();
      for (const auto& t : kv_list(e)) c.seeds.push_back(kv_uint(doc, e, t));
    } else if (s == "run" && k == "fixed_split") c.fixed_split = kv_bool(doc, e);
    else if (s == "run" && k == "split_seed") c.split_seed = kv_uint(doc, e);
    else if (s == "run" && k == "parallel") c.parallel = kv_uint(doc, e);
    else if (s == "run" && k == "output") c.output = e.value;
    else kv_fail(doc, e, "unknown key");
  } catch (const ConfigError& err) {
    const std::string msg = err.what();
    if (msg.rfind(doc.source + ":", 0) == 0) throw;
    kv_fail(doc, e, msg);
  }
}

}  // namespace

void check_run_config(const RunConfig& c, const std::string& source) {
  try {
    c.model.validate();
    c.train.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(source + ": " + err.what());
  }
  if (c.csv.empty()) throw ConfigError(source + ": [data] csv is required");
  if (c.schema.empty()) throw ConfigError(source + ": [data] schema is required");
  if (!fs::exists(c.schema)) throw ConfigError(source + ": schema file not found: " + c.schema);
  if (!fs::exists(c.csv)) throw ConfigError(source + ": data file not found: " + c.csv);
  if (c.seeds.empty()) throw ConfigError(source + ": [run] seeds must not be empty");
  if (c.parallel == 0) throw ConfigError(source + ": [run] parallel must be >= 1");
}

RunConfig parse_run_config(const std::string& text, const std::string& source, const std::string& base_dir,
                           const std::vector<ConfigOverride>& overrides) {
  RunConfig c;
  const KvDocument doc = parse_kv(text, source, true);
  for (const auto& e : doc.entries) apply(c, doc, e, base_dir);
  const KvDocument flags{"command line", {}};
  for (const auto& o : overrides) apply(c, flags, KvEntry{o.section, o.key, o.value, 0}, "");
  check_run_config(c, source);
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<ConfigOverride>& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  const std::string base = fs::path(path).parent_path().string();
  return parse_run_config(read_text_file(path), path, base, overrides);
}

std::string canonical_text(const RunConfig& c) {
  auto list = [](const auto& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + std::to_string(values[i]);
    return out;
  };
  std::ostringstream os;
  os << "[data]\n"
     << "csv = " << c.csv << "\n"
     << "schema = " << c.schema << "\n"
     << "\n[model]\n"
     << "head = " << to_string(c.model.head) << "\n"
     << "transformer_depth = " << c.model.transformer_depth << "\n"
     << "heads = " << c.model.heads << "\n"
     << "dim = " << c.model.dim << "\n"
     << "gmlp_depth = " << c.model.gmlp_depth << "\n"
     << "gmlp_dim = " << c.model.gmlp_dim << "\n"
     << "gmlp_mult = " << c.model.gmlp_mult << "\n"
     << "mlp_hidden = " << list(c.model.mlp_hidden) << "\n"
     << "activation = " << to_string(c.model.activation) << "\n"
     << "dropout = " << format_double(c.model.dropout) << "\n"
     << "cont_norm = " << to_string(c.model.cont_norm) << "\n"
     << "\n[train]\n"
     << "lr = " << format_double(c.train.lr) << "\n"
     << "gamma = " << format_double(c.train.gamma) << "\n"
     << "step = " << c.train.step << "\n"
     << "patience = " << c.train.patience << "\n"
     << "max_epochs = " << c.train.max_epochs << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "\n[run]\n"
     << "seeds = " << list(c.seeds) << "\n"
     << "fixed_split = " << (c.fixed_split ? "true" : "false") << "\n"
     << "split_seed = " << c.split_seed << "\n"
     << "parallel = " << c.parallel << "\n"
     << "output = " << c.output << "\n";
  return os.str();
}

}  // namespace gtt
