#include "gtt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gtt/config.hpp"
#include "gtt/error.hpp"
#include "gtt/eval.hpp"
#include "gtt/hpo.hpp"
#include "gtt/kv.hpp"

namespace fs = std::filesystem;

namespace gtt {

namespace {

struct TrainFlags {
  std::string config;
  std::vector<std::string> sets;  // section.key=value
  std::optional<std::string> data, schema, head, output, activation, cont_norm;
  std::optional<std::uint64_t> seed, split_seed;
  std::optional<double> lr, gamma, dropout;
  std::optional<std::size_t> step, patience, max_epochs, batch_size, dim, heads, depth, gmlp_depth, parallel;
  bool fixed_split = false;
};

void add_run_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "Run config file");
  cmd->add_option("--data", f.data, "CSV file (overrides [data] csv)");
  cmd->add_option("--schema", f.schema, "Schema file (overrides [data] schema)");
  cmd->add_option("--head", f.head, "gmlp, mlp or none");
  cmd->add_option("--seed", f.seed, "Single seed (replaces [run] seeds)");
  cmd->add_option("--output", f.output, "Output directory");
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--gamma", f.gamma);
  cmd->add_option("--step", f.step);
  cmd->add_option("--patience", f.patience);
  cmd->add_option("--max-epochs", f.max_epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--dropout", f.dropout);
  cmd->add_option("--dim", f.dim);
  cmd->add_option("--heads", f.heads);
  cmd->add_option("--depth", f.depth, "Transformer depth N");
  cmd->add_option("--gmlp-depth", f.gmlp_depth, "gMLP depth L");
  cmd->add_option("--activation", f.activation);
  cmd->add_option("--cont-norm", f.cont_norm, "layer or none");
  cmd->add_option("--parallel", f.parallel, "Concurrent runs");
  cmd->add_flag("--fixed-split", f.fixed_split, "Keep one split across seeds");
  cmd->add_option("--split-seed", f.split_seed);
  cmd->add_option("--set", f.sets, "Override any config key: section.key=value");
}

RunConfig resolve_config(const TrainFlags& f) {
  std::vector<ConfigOverride> o;
  auto put = [&](const char* section, const char* key, const std::string& value) { o.push_back({section, key, value}); };
  auto num = [](auto v) { return format_double(static_cast<double>(v)); };
  for (const auto& s : f.sets) {
    const auto dot = s.find('.');
    const auto eq = s.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
      throw ConfigError("--set expects section.key=value, got '" + s + "'");
    }
    o.push_back({s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1)});
  }
  if (f.data) put("data", "csv", *f.data);
  if (f.schema) put("data", "schema", *f.schema);
  if (f.head) put("model", "head", *f.head);
  if (f.activation) put("model", "activation", *f.activation);
  if (f.cont_norm) put("model", "cont_norm", *f.cont_norm);
  if (f.dropout) put("model", "dropout", num(*f.dropout));
  if (f.dim) put("model", "dim", std::to_string(*f.dim));
  if (f.heads) put("model", "heads", std::to_string(*f.heads));
  if (f.depth) put("model", "transformer_depth", std::to_string(*f.depth));
  if (f.gmlp_depth) put("model", "gmlp_depth", std::to_string(*f.gmlp_depth));
  if (f.lr) put("train", "lr", num(*f.lr));
  if (f.gamma) put("train", "gamma", num(*f.gamma));
  if (f.step) put("train", "step", std::to_string(*f.step));
  if (f.patience) put("train", "patience", std::to_string(*f.patience));
  if (f.max_epochs) put("train", "max_epochs", std::to_string(*f.max_epochs));
  if (f.batch_size) put("train", "batch_size", std::to_string(*f.batch_size));
  if (f.seed) put("run", "seeds", std::to_string(*f.seed));
  if (f.output) put("run", "output", *f.output);
  if (f.parallel) put("run", "parallel", std::to_string(*f.parallel));
  if (f.fixed_split) put("run", "fixed_split", "true");
  if (f.split_seed) put("run", "split_seed", std::to_string(*f.split_seed));
  if (!f.config.empty()) return load_run_config(f.config, o);
  return parse_run_config("", "command line", "", o);
}

fs::path output_dir(const std::string& requested, const std::string& fallback) {
  fs::path p = requested.empty() ? fs::path(fallback) : fs::path(requested);
  if (p.is_relative()) p = fs::path(output_root()) / p;
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string dataset_name(const SchemaFile& s, const std::string& csv) {
  return s.name.empty() ? fs::path(csv).stem().string() : s.name;
}

// ---- train -------------------------------------------------------------------

int cmd_train(const TrainFlags& flags, std::ostream& out) {
  const RunConfig cfg = resolve_config(flags);
  const SchemaFile sf = load_schema_file(cfg.schema);
  const RawTable raw = load_csv(cfg.csv, sf);
  const std::uint64_t seed = cfg.seeds.front();
  const std::uint64_t split_seed = cfg.fixed_split ? cfg.split_seed : seed;
  const fs::path dir = output_dir(cfg.output, dataset_name(sf, cfg.csv) + "-" + to_string(cfg.model.head));
  write_file(dir / "config.ini", canonical_text(cfg));

  const Splits splits = split_indices(raw.rows, split_seed);
  const DatasetSchema schema = fit_encoders(raw, splits);
  const Dataset data = encode(raw, schema);
  Model model = build_model(cfg.model, schema, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  const TrainReport report = train_loop(model, data, splits, tc, &metrics);
  if (report.best_epoch == 0) throw DivergenceError("training diverged before the first epoch: " + report.message);

  const nlohmann::json meta{{"seed", seed},
                            {"split_seed", split_seed},
                            {"csv", cfg.csv},
                            {"schema_file", canonical_text(sf)},
                            {"best_epoch", report.best_epoch}};
  save_checkpoint((dir / "model.ckpt").string(), model, schema, meta);

  // The test split is scored once, after model selection.
  std::vector<double> test_labels;
  for (std::size_t i : splits.test) test_labels.push_back(data.labels[i]);
  const auto roc = roc_points(predict(model, data, splits.test), test_labels);
  const double test_auroc = trapezoid_area(roc);
  std::ostringstream roc_csv;
  write_roc_csv(roc_csv, roc);
  write_file(dir / "roc_test.csv", roc_csv.str());

  const std::size_t total = param_count(model);
  const std::size_t upstream = count_scalars(model.upstream_parameters());
  nlohmann::json summary{{"dataset", dataset_name(sf, cfg.csv)},
                         {"head", to_string(cfg.model.head)},
                         {"seed", seed},
                         {"split_seed", split_seed},
                         {"epochs_run", report.epochs.size()},
                         {"best_epoch", report.best_epoch},
                         {"best_val_auroc", report.best_val_auroc},
                         {"stop_reason", to_string(report.stop_reason)},
                         {"message", report.message},
                         {"test_rows", splits.test.size()},
                         {"test_auroc", test_auroc},
                         {"param_count", total},
                         {"head_param_count", total - upstream}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  out << fmt::format("{} head={} seed={} epochs={} best_epoch={} val_auroc={:.6f} test_auroc={:.6f} params={} "
                     "(head {})\n",
                     dataset_name(sf, cfg.csv), to_string(cfg.model.head), seed, report.epochs.size(),
                     report.best_epoch, report.best_val_auroc, test_auroc, total, total - upstream);
  out << "outputs: " << dir.string() << "\n";
  return kExitOk;
}

// ---- evaluate ----------------------------------------------------------------

int cmd_evaluate(const std::string& checkpoint, const std::optional<std::string>& data_path,
                 const std::optional<std::string>& schema_path, const std::string& split,
                 const std::optional<std::string>& roc_path, std::ostream& out) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const std::string csv = data_path ? *data_path : ck.meta.value("csv", "");
  if (csv.empty() || !fs::exists(csv)) throw ConfigError("data file not found: " + csv);
  SchemaFile sf;
  if (schema_path) {
    if (!fs::exists(*schema_path)) throw ConfigError("schema file not found: " + *schema_path);
    sf = load_schema_file(*schema_path);
  } else {
    sf = parse_schema_text(ck.meta.at("schema_file").get<std::string>(), checkpoint);
  }
  if (layout_fingerprint(sf) != ck.schema.fingerprint()) {
    throw Error(fmt::format("schema fingerprint mismatch: checkpoint {:016x}, dataset {:016x}",
                            ck.schema.fingerprint(), layout_fingerprint(sf)));
  }
  const RawTable raw = load_csv(csv, sf);
  const Dataset data = encode(raw, ck.schema);

  std::vector<std::size_t> rows;
  if (split == "all") {
    rows.resize(raw.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  } else {
    const Splits s = split_indices(raw.rows, ck.meta.at("split_seed").get<std::uint64_t>());
    if (split == "test") rows = s.test;
    else if (split == "validation") rows = s.validation;
    else if (split == "train") rows = s.train;
    else throw ConfigError("--split must be train, validation, test or all");
  }
  std::vector<double> labels;
  for (std::size_t i : rows) labels.push_back(data.labels[i]);
  const auto roc = roc_points(predict(ck.model, data, rows), labels);
  const double value = trapezoid_area(roc);
  const fs::path roc_file = roc_path ? fs::path(*roc_path) : fs::path(checkpoint).parent_path() / ("roc_" + split + ".csv");
  std::ostringstream roc_csv;
  write_roc_csv(roc_csv, roc);
  write_file(roc_file, roc_csv.str());
  out << fmt::format("auroc {:.17g}\nrows {}\nroc {}\n", value, rows.size(), roc_file.string());
  return kExitOk;
}

// ---- dataset-report ----------------------------------------------------------

int cmd_dataset_report(const std::string& csv, const std::string& schema_path, const std::string& output,
                       std::ostream& out) {
  if (!fs::exists(schema_path)) throw ConfigError("schema file not found: " + schema_path);
  if (!fs::exists(csv)) throw ConfigError("data file not found: " + csv);
  const SchemaFile sf = load_schema_file(schema_path);
  const RawTable raw = load_csv(csv, sf);
  const DatasetStats stats = dataset_stats(raw);
  const std::string name = dataset_name(sf, csv);

  Splits everything;
  everything.train.resize(raw.rows);
  std::iota(everything.train.begin(), everything.train.end(), std::size_t{0});
  const DatasetSchema schema = fit_encoders(raw, everything);
  const CorrelationMatrix corr = correlation_matrix(encode(raw, schema), schema);

  const fs::path dir = output_dir(output, name + "-report");
  std::ostringstream corr_csv;
  write_correlation_csv(corr_csv, corr);
  write_file(dir / "correlation.csv", corr_csv.str());
  const nlohmann::json report{{"dataset", name},
                              {"rows", stats.rows},
                              {"features", stats.total_features},
                              {"categorical", stats.categorical},
                              {"continuous", stats.continuous},
                              {"positive_percent", stats.positive_percent}};
  write_file(dir / "report.json", report.dump(2) + "\n");
  out << "dataset,rows,features,categorical,continuous,positive_percent\n"
      << fmt::format("{},{},{},{},{},{:.1f}\n", name, stats.rows, stats.total_features, stats.categorical,
                     stats.continuous, stats.positive_percent);
  for (const auto& w : corr.warnings) out << "warning: " << w << "\n";
  out << "outputs: " << dir.string() << "\n";
  return kExitOk;
}

// ---- tune --------------------------------------------------------------------

int cmd_tune(const TrainFlags& flags, const std::string& grid_path, bool resume, std::size_t budget,
             std::ostream& out) {
  const RunConfig cfg = resolve_config(flags);
  if (!fs::exists(grid_path)) throw ConfigError("grid spec not found: " + grid_path);
  GridSpec spec = load_grid_spec(grid_path);
  const SchemaFile sf = load_schema_file(cfg.schema);
  const RawTable raw = load_csv(cfg.csv, sf);
  const fs::path dir = output_dir(cfg.output, dataset_name(sf, cfg.csv) + "-tune");
  write_file(dir / "config.ini", canonical_text(cfg));
  write_file(dir / "grid.txt", canonical_text(spec));

  GridOptions options;
  options.log_path = (dir / "trials.jsonl").string();
  options.resume = resume;
  options.budget = budget;
  options.parallel = cfg.parallel;  // concurrent trials
  options.progress = &out;
  const GridOutcome outcome = run_grid(spec, raw, options);

  std::ostringstream curve;
  write_dim_curve_csv(curve, outcome.trials);
  write_file(dir / "dim_curve.csv", curve.str());
  out << fmt::format("grid {} | run {} | skipped {} | remaining {}\n", outcome.grid_size, outcome.run,
                     outcome.skipped, outcome.remaining);
  if (outcome.best) {
    const TrialResult& best = outcome.trials[*outcome.best];
    RunConfig best_cfg = cfg;
    best_cfg.model = model_config_from_json(best.config.at("model"));
    best_cfg.train = train_config_from_json(best.config.at("train"));
    best_cfg.seeds = spec.seeds;
    write_file(dir / "best_config.ini", canonical_text(best_cfg));
    out << fmt::format("best trial {} ({}) mean_auroc={:.6f} std={:.6f} params={}\n", best.index,
                       best.config_hash, best.mean, best.stddev, best.param_count);
  } else {
    out << "no completed trials yet\n";
  }
  out << "outputs: " << dir.string() << "\n";
  return kExitOk;
}

// ---- compare -----------------------------------------------------------------

int cmd_compare(const TrainFlags& flags, const std::vector<std::string>& models, std::ostream& out) {
  const RunConfig cfg = resolve_config(flags);
  if (cfg.seeds.size() < 2) throw ConfigError("compare needs at least 2 seeds");
  const SchemaFile sf = load_schema_file(cfg.schema);
  const RawTable raw = load_csv(cfg.csv, sf);
  const fs::path dir = output_dir(cfg.output, dataset_name(sf, cfg.csv) + "-compare");
  write_file(dir / "config.ini", canonical_text(cfg));

  std::vector<EvalResult> results;
  for (const auto& name : models) {
    RunSpec spec;
    spec.id = name;
    spec.model = cfg.model;
    spec.train = cfg.train;
    spec.fixed_split = cfg.fixed_split;
    spec.split_seed = cfg.split_seed;
    if (name == "logreg") spec.kind = ModelKind::kLogistic;
    else spec.model.head = parse_head_kind(name);
    std::vector<SeedOutcome> outcomes;
    results.push_back(mean_auroc_over_seeds(raw, spec, cfg.seeds, cfg.parallel, &outcomes));
    for (const auto& o : outcomes) {
      if (o.roc.empty()) continue;
      std::ostringstream roc;
      write_roc_csv(roc, o.roc);
      write_file(dir / fmt::format("roc_{}_seed{}.csv", name, o.seed), roc.str());
    }
    const auto& r = results.back();
    out << fmt::format("{:8s} mean_auroc={:.6f} std={:.6f} seeds={} diverged={} params={}\n", name, r.mean,
                       r.stddev, r.seeds.size(), r.diverged_seeds.size(),
                       outcomes.empty() ? 0 : outcomes.front().param_count);
  }
  std::ostringstream eval_csv, gains;
  write_eval_csv(eval_csv, results);
  write_file(dir / "eval.csv", eval_csv.str());
  if (results.size() >= 2) {
    const auto rows = compare_models(results);
    write_gain_csv(gains, rows);
    write_file(dir / "gains.csv", gains.str());
    for (const auto& row : rows) {
      out << fmt::format("gain {} vs {}: {:+.3f} points (paired sd {:.3f} over {} seeds)\n", row.model,
                         row.baseline, row.gain_points, row.paired_sd, row.pairs);
    }
  }
  out << "outputs: " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

std::string output_root() {
  const char* env = std::getenv("GTT_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GatedTabTransformer: training, evaluation and tuning for tabular binary classification"};
  app.name("gtt");
  app.require_subcommand(1);

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one model and score its test split");
  add_run_flags(train, train_flags);

  TrainFlags tune_flags;
  std::string grid;
  bool resume = false;
  std::size_t budget = 0;
  auto* tune = app.add_subcommand("tune", "Grid search with a resumable trial log");
  add_run_flags(tune, tune_flags);
  tune->add_option("--grid", grid, "Grid spec file")->required();
  tune->add_flag("--resume", resume, "Continue an existing trial log");
  tune->add_option("--budget", budget, "Max trials to run (0 = all)");

  std::string checkpoint, split = "test";
  std::optional<std::string> eval_data, eval_schema, roc_path;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--data", eval_data, "CSV file (default: the training CSV)");
  evaluate->add_option("--schema", eval_schema, "Schema file (default: the one stored in the checkpoint)");
  evaluate->add_option("--split", split, "train, validation, test or all");
  evaluate->add_option("--roc", roc_path, "ROC CSV output path");

  std::string report_data, report_schema, report_output;
  auto* report = app.add_subcommand("dataset-report", "Dataset statistics and correlation matrix");
  report->add_option("--data", report_data)->required();
  report->add_option("--schema", report_schema)->required();
  report->add_option("--output", report_output);

  TrainFlags compare_flags;
  std::vector<std::string> models{"gmlp", "mlp", "logreg"};
  auto* compare = app.add_subcommand("compare", "Mean AUROC over seeds for several models, plus gain table");
  add_run_flags(compare, compare_flags);
  compare->add_option("--models", models, "Any of gmlp, mlp, none, logreg; the first is compared to the rest")
      ->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "gtt: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*tune) return cmd_tune(tune_flags, grid, resume, budget, out);
    if (*evaluate) return cmd_evaluate(checkpoint, eval_data, eval_schema, split, roc_path, out);
    if (*report) return cmd_dataset_report(report_data, report_schema, report_output, out);
    if (*compare) return cmd_compare(compare_flags, models, out);
  } catch (const ConfigError& e) {
    err << "gtt: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataFileError& e) {
    err << "gtt: " << e.what() << "\n";
    return e.kind() == DataFileError::Kind::kMissingFile ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "gtt: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gtt
