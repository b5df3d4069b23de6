#include "gtt/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gtt/error.hpp"
#include "gtt/kv.hpp"

namespace gtt {

namespace {

template <typename T>
std::string join_values(const std::vector<T>& values, auto&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt_one(values[i]);
  }
  return out;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace

void GridSpec::validate() const {
  auto need = [](bool non_empty, const char* axis) {
    if (!non_empty) throw ConfigError(std::string("grid: axis '") + axis + "' is empty");
  };
  need(!lr.empty(), "lr");
  need(!step.empty(), "step");
  need(!gamma.empty(), "gamma");
  need(!dropout.empty(), "dropout");
  need(!heads.empty(), "heads");
  need(!depth.empty(), "depth");
  need(!dims.empty(), "dims");
  need(!head.empty(), "head");
  need(!activation.empty(), "activation");
  if (seeds.size() < 2) throw ConfigError("grid: at least 2 seeds per trial are required");
}

std::size_t GridSpec::size() const {
  return lr.size() * step.size() * gamma.size() * dropout.size() * heads.size() * depth.size() * dims.size() *
         head.size() * activation.size();
}

std::uint64_t GridSpec::hash() const { return fnv1a(canonical_text(*this)); }

GridSpec parse_grid_spec(const std::string& text, const std::string& source) {
  const KvDocument doc = parse_kv(text, source, false);
  GridSpec s;
  for (const auto& e : doc.entries) {
    const auto items = kv_list(e);
    auto doubles = [&] {
      std::vector<double> v;
      for (const auto& t : items) v.push_back(kv_double(doc, e, t));
      return v;
    };
    auto sizes = [&] {
      std::vector<std::size_t> v;
      for (const auto& t : items) v.push_back(kv_uint(doc, e, t));
      return v;
    };
    try {
      if (e.key == "lr") s.lr = doubles();
      else if (e.key == "step") s.step = sizes();
      else if (e.key == "gamma") s.gamma = doubles();
      else if (e.key == "dropout") s.dropout = doubles();
      else if (e.key == "heads") s.heads = sizes();
      else if (e.key == "depth") s.depth = sizes();
      else if (e.key == "dims") s.dims = sizes();
      else if (e.key == "head") {
        s.head.clear();
        for (const auto& t : items) s.head.push_back(parse_head_kind(t));
      } else if (e.key == "activation") {
        s.activation.clear();
        for (const auto& t : items) s.activation.push_back(parse_activation(t));
      } else if (e.key == "seeds") {
        s.seeds.clear();
        for (const auto& t : items) s.seeds.push_back(kv_uint(doc, e, t));
      } else if (e.key == "transformer_depth") s.base_model.transformer_depth = kv_uint(doc, e);
      else if (e.key == "gmlp_mult") s.base_model.gmlp_mult = kv_uint(doc, e);
      else if (e.key == "cont_norm") s.base_model.cont_norm = parse_cont_norm(e.value);
      else if (e.key == "max_epochs") s.base_train.max_epochs = kv_uint(doc, e);
      else if (e.key == "patience") s.base_train.patience = kv_uint(doc, e);
      else if (e.key == "batch_size") s.base_train.batch_size = kv_uint(doc, e);
      else if (e.key == "fixed_split") s.fixed_split = kv_bool(doc, e);
      else if (e.key == "split_seed") s.split_seed = kv_uint(doc, e);
      else if (e.key == "order_seed") s.order_seed = kv_uint(doc, e);
      else kv_fail(doc, e, "unknown key");
    } catch (const ConfigError& err) {
      const std::string msg = err.what();
      if (msg.rfind(source, 0) == 0) throw;
      kv_fail(doc, e, msg);
    }
    if (items.empty()) kv_fail(doc, e, "empty value list");
  }
  try {
    s.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(source + ": " + err.what());
  }
  return s;
}

GridSpec load_grid_spec(const std::string& path) { return parse_grid_spec(read_text_file(path), path); }

std::string canonical_text(const GridSpec& s) {
  auto d = [](double v) { return format_double(v); };
  auto z = [](std::uint64_t v) { return std::to_string(v); };
  std::ostringstream os;
  os << "lr = " << join_values(s.lr, d) << "\n"
     << "step = " << join_values(s.step, z) << "\n"
     << "gamma = " << join_values(s.gamma, d) << "\n"
     << "dropout = " << join_values(s.dropout, d) << "\n"
     << "heads = " << join_values(s.heads, z) << "\n"
     << "depth = " << join_values(s.depth, z) << "\n"
     << "dims = " << join_values(s.dims, z) << "\n"
     << "head = " << join_values(s.head, [](HeadKind k) { return to_string(k); }) << "\n"
     << "activation = " << join_values(s.activation, [](const Activation& a) { return to_string(a); }) << "\n"
     << "seeds = " << join_values(s.seeds, z) << "\n"
     << "transformer_depth = " << s.base_model.transformer_depth << "\n"
     << "gmlp_mult = " << s.base_model.gmlp_mult << "\n"
     << "cont_norm = " << to_string(s.base_model.cont_norm) << "\n"
     << "max_epochs = " << s.base_train.max_epochs << "\n"
     << "patience = " << s.base_train.patience << "\n"
     << "batch_size = " << s.base_train.batch_size << "\n"
     << "fixed_split = " << (s.fixed_split ? "true" : "false") << "\n"
     << "split_seed = " << s.split_seed << "\n";
  if (s.order_seed) os << "order_seed = " << *s.order_seed << "\n";
  return os.str();
}

std::vector<GridPoint> enumerate_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<GridPoint> out;
  out.reserve(spec.size());
  for (HeadKind head : spec.head)
    for (const Activation& act : spec.activation)
      for (double lr : spec.lr)
        for (std::size_t step : spec.step)
          for (double gamma : spec.gamma)
            for (double dropout : spec.dropout)
              for (std::size_t heads : spec.heads)
                for (std::size_t depth : spec.depth)
                  for (std::size_t dims : spec.dims) {
                    GridPoint p;
                    p.index = out.size();
                    p.model = spec.base_model;
                    p.model.head = head;
                    p.model.activation = act;
                    p.model.dropout = dropout;
                    p.model.heads = heads;
                    p.model.dim = dims;
                    p.model.gmlp_dim = 0;
                    p.model.gmlp_depth = depth;
                    p.model.mlp_hidden.assign(depth, dims);
                    p.train = spec.base_train;
                    p.train.lr = lr;
                    p.train.step = step;
                    p.train.gamma = gamma;
                    p.valid = heads > 0 && dims % heads == 0;
                    nlohmann::json cfg{{"model", to_json(p.model)}, {"train", to_json(p.train)}};
                    p.config_hash = hex64(fnv1a(cfg.dump()));
                    out.push_back(std::move(p));
                  }
  return out;
}

std::string to_string(TrialStatus status) {
  switch (status) {
    case TrialStatus::kOk: return "ok";
    case TrialStatus::kDiverged: return "diverged";
    case TrialStatus::kSkipped: return "skipped";
  }
  return "?";
}

TrialStatus parse_trial_status(std::string_view text) {
  if (text == "ok") return TrialStatus::kOk;
  if (text == "diverged") return TrialStatus::kDiverged;
  if (text == "skipped") return TrialStatus::kSkipped;
  throw Error("unknown trial status '" + std::string(text) + "'");
}

nlohmann::json TrialResult::to_record() const {
  return {{"type", "trial"},   {"index", index},       {"config_hash", config_hash}, {"config", config},
          {"status", to_string(status)}, {"seeds", seeds}, {"aurocs", aurocs},   {"mean", mean},
          {"std", stddev},     {"epochs", epochs},     {"param_count", param_count}, {"message", message}};
}

TrialResult TrialResult::from_record(const nlohmann::json& j) {
  TrialResult t;
  t.index = j.at("index").get<std::size_t>();
  t.config_hash = j.at("config_hash").get<std::string>();
  t.config = j.at("config");
  t.status = parse_trial_status(j.at("status").get<std::string>());
  t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  t.aurocs = j.at("aurocs").get<std::vector<double>>();
  t.mean = j.at("mean").get<double>();
  t.stddev = j.at("std").get<double>();
  t.epochs = j.at("epochs").get<std::vector<std::size_t>>();
  t.param_count = j.at("param_count").get<std::size_t>();
  t.message = j.at("message").get<std::string>();
  return t;
}

TrialResult run_trial(const GridPoint& point, const GridSpec& spec, const RawTable& raw) {
  TrialResult t;
  t.index = point.index;
  t.config_hash = point.config_hash;
  t.config = {{"model", to_json(point.model)}, {"train", to_json(point.train)}};
  if (!point.valid) {
    t.status = TrialStatus::kSkipped;
    t.message = fmt::format("dims {} not divisible by heads {}", point.model.dim, point.model.heads);
    return t;
  }
  const auto start = std::chrono::steady_clock::now();
  RunSpec run;
  run.id = point.config_hash;
  run.model = point.model;
  run.train = point.train;
  run.fixed_split = spec.fixed_split;
  run.split_seed = spec.split_seed;
  std::vector<SeedOutcome> outcomes;
  try {
    EvalResult r = mean_auroc_over_seeds(raw, run, spec.seeds, 1, &outcomes);
    t.status = TrialStatus::kOk;
    t.seeds = r.seeds;
    t.aurocs = r.aurocs;
    t.mean = r.mean;
    t.stddev = r.stddev;
    if (!r.diverged_seeds.empty()) t.message = fmt::format("{} seed(s) diverged", r.diverged_seeds.size());
  } catch (const DivergenceError& err) {
    t.status = TrialStatus::kDiverged;
    t.message = err.what();
  }
  for (const auto& o : outcomes) t.epochs.push_back(o.report.epochs.size());
  if (!outcomes.empty()) t.param_count = outcomes.front().param_count;
  t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

std::optional<std::size_t> select_best(const std::vector<TrialResult>& trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.status != TrialStatus::kOk) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = trials[*best];
    if (t.mean > b.mean || (t.mean == b.mean && (t.param_count < b.param_count ||
                                                  (t.param_count == b.param_count && t.index < b.index)))) {
      best = i;
    }
  }
  return best;
}

std::vector<TrialResult> read_trial_log(const std::string& path, std::uint64_t* spec_hash) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trial log " + path);
  std::vector<TrialResult> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
      throw Error(path + ": malformed record");
    }
    if (j.value("type", "") == "header") {
      header = true;
      if (spec_hash) *spec_hash = std::stoull(j.at("spec_hash").get<std::string>(), nullptr, 16);
    } else {
      out.push_back(TrialResult::from_record(j));
    }
  }
  if (!header) throw Error(path + ": missing header record");
  return out;
}

GridOutcome run_grid(const GridSpec& spec, const RawTable& raw, const GridOptions& options) {
  const auto points = enumerate_grid(spec);
  GridOutcome outcome;
  outcome.grid_size = points.size();

  std::map<std::size_t, TrialResult> done;
  const std::string spec_hash = hex64(spec.hash());
  if (!options.log_path.empty() && options.resume && std::filesystem::exists(options.log_path)) {
    std::uint64_t logged = 0;
    for (auto& t : read_trial_log(options.log_path, &logged)) {
      if (logged != spec.hash()) break;
      done[t.index] = std::move(t);
    }
    if (logged != spec.hash()) {
      throw ConfigError("resume: " + options.log_path + " was written for grid spec " + hex64(logged) +
                        ", current spec is " + spec_hash);
    }
  }

  std::ofstream log, timing;
  if (!options.log_path.empty()) {
    // Rewrite from the parsed records so a torn final line never survives.
    log.open(options.log_path, std::ios::trunc);
    if (!log) throw Error("cannot write trial log " + options.log_path);
    log << nlohmann::json{{"type", "header"}, {"spec_hash", spec_hash}, {"grid_size", points.size()}}.dump() << '\n';
    for (const auto& [index, t] : done) log << t.to_record().dump() << '\n';
    log.flush();
    timing.open(options.log_path + ".timing", options.resume ? std::ios::app : std::ios::trunc);
  }

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (spec.order_seed) {
    Rng rng(*spec.order_seed, Stream::kGrid);
    std::shuffle(order.begin(), order.end(), rng.engine());
  }

  std::size_t ran_now = 0;
  std::size_t cursor = 0;
  auto budget_left = [&] { return options.budget == 0 || ran_now < options.budget; };
  while (cursor < order.size() && budget_left()) {
    // Collect the next wave: skipped points are free, runnable ones bounded
    // by parallelism and the remaining budget.
    std::vector<std::size_t> wave;
    std::size_t runnable = 0;
    const std::size_t cap = std::max<std::size_t>(1, options.parallel);
    while (cursor < order.size() && runnable < cap) {
      const std::size_t idx = order[cursor];
      if (done.count(idx)) {
        ++cursor;
        continue;
      }
      if (points[idx].valid) {
        if (options.budget != 0 && ran_now + runnable >= options.budget) break;
        ++runnable;
      }
      wave.push_back(idx);
      ++cursor;
    }
    if (wave.empty()) break;
    std::vector<TrialResult> results(wave.size());
    parallel_for(wave.size(), cap, [&](std::size_t i) { results[i] = run_trial(points[wave[i]], spec, raw); });
    for (auto& t : results) {
      if (t.status != TrialStatus::kSkipped) ++ran_now;
      if (log.is_open()) {
        log << t.to_record().dump() << '\n';
        log.flush();
        if (t.status != TrialStatus::kSkipped) timing << t.index << ' ' << t.wall_seconds << '\n';
      }
      if (options.progress) {
        *options.progress << fmt::format("trial {}/{} {} {} mean_auroc={:.5f}\n", t.index + 1, points.size(),
                                         t.config_hash, to_string(t.status), t.mean);
      }
      done[t.index] = std::move(t);
    }
  }

  for (auto& [index, t] : done) {
    if (t.status == TrialStatus::kSkipped) ++outcome.skipped;
    else ++outcome.run;
    outcome.trials.push_back(std::move(t));
  }
  outcome.remaining = outcome.grid_size - outcome.skipped - outcome.run;
  outcome.best = select_best(outcome.trials);
  return outcome;
}

void write_dim_curve_csv(std::ostream& out, const std::vector<TrialResult>& trials) {
  std::map<std::pair<std::string, std::size_t>, std::pair<double, std::size_t>> best;
  for (const auto& t : trials) {
    if (t.status != TrialStatus::kOk) continue;
    const auto& m = t.config.at("model");
    const auto key = std::make_pair(m.at("head").get<std::string>(), m.at("dim").get<std::size_t>());
    auto [it, inserted] = best.try_emplace(key, t.mean, 0);
    it->second.first = std::max(it->second.first, t.mean);
    ++it->second.second;
  }
  out << "head,dim,best_mean_auroc,trials\n";
  for (const auto& [key, v] : best) out << fmt::format("{},{},{:.6f},{}\n", key.first, key.second, v.first, v.second);
}

}  // namespace gtt
