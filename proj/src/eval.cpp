#include "gtt/eval.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "gtt/baseline.hpp"
#include "gtt/error.hpp"

namespace gtt {

namespace {

double sample_sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

}  // namespace

EvalResult aggregate(std::string model_id, std::string dataset, const std::vector<std::uint64_t>& seeds,
                     const std::vector<std::optional<double>>& aurocs) {
  if (seeds.size() != aurocs.size()) throw Error("aggregate: seed and result counts differ");
  EvalResult r;
  r.model_id = std::move(model_id);
  r.dataset = std::move(dataset);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (aurocs[i]) {
      r.seeds.push_back(seeds[i]);
      r.aurocs.push_back(*aurocs[i]);
    } else {
      r.diverged_seeds.push_back(seeds[i]);
    }
  }
  if (2 * r.diverged_seeds.size() > seeds.size()) {
    throw DivergenceError(fmt::format("{}: {} of {} seeds diverged", r.model_id, r.diverged_seeds.size(), seeds.size()));
  }
  r.mean = mean_of(r.aurocs);
  r.stddev = sample_sd(r.aurocs);
  return r;
}

SeedOutcome run_seed(const RawTable& raw, const RunSpec& spec, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  const Splits splits = split_indices(raw.rows, spec.fixed_split ? spec.split_seed : seed);
  const DatasetSchema schema = fit_encoders(raw, splits);
  const Dataset data = encode(raw, schema);
  std::vector<double> test_labels;
  for (std::size_t i : splits.test) test_labels.push_back(data.labels[i]);

  std::vector<double> scores;
  if (spec.kind == ModelKind::kLogistic) {
    const auto lr = LogisticRegression::fit(data, splits.train, schema.vocab_sizes(), spec.l2);
    out.param_count = lr.weights.size();
    scores = lr.decision(data, splits.test);
  } else {
    Model model = build_model(spec.model, schema, seed);
    TrainConfig tc = spec.train;
    tc.seed = seed;
    out.report = train_loop(model, data, splits, tc);
    out.param_count = param_count(model);
    if (out.report.diverged() && out.report.best_epoch == 0) return out;
    scores = predict(model, data, splits.test);
  }
  out.roc = roc_points(scores, test_labels);
  out.test_auroc = trapezoid_area(out.roc);
  return out;
}

void parallel_for(std::size_t n, std::size_t parallel, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallel, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

EvalResult mean_auroc_over_seeds(const RawTable& raw, const RunSpec& spec, const std::vector<std::uint64_t>& seeds,
                                 std::size_t parallel, std::vector<SeedOutcome>* outcomes) {
  if (seeds.size() < 2) throw ConfigError("mean_auroc_over_seeds: need at least 2 seeds");
  std::vector<SeedOutcome> runs(seeds.size());
  parallel_for(seeds.size(), parallel, [&](std::size_t i) { runs[i] = run_seed(raw, spec, seeds[i]); });
  std::vector<std::optional<double>> values;
  for (const auto& r : runs) values.push_back(r.test_auroc);
  EvalResult result = aggregate(spec.id, raw.schema.name, seeds, values);
  if (outcomes) *outcomes = std::move(runs);
  return result;
}

std::vector<std::uint64_t> default_seeds(std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = i;
  return seeds;
}

std::vector<GainRow> compare_models(const std::vector<EvalResult>& results) {
  if (results.size() < 2) throw Error("compare_models: need a model and at least one baseline");
  const EvalResult& model = results.front();
  std::map<std::uint64_t, double> by_seed;
  for (std::size_t i = 0; i < model.seeds.size(); ++i) by_seed[model.seeds[i]] = model.aurocs[i];

  std::vector<GainRow> rows;
  for (std::size_t b = 1; b < results.size(); ++b) {
    const EvalResult& base = results[b];
    if (base.dataset != model.dataset) {
      throw Error("compare_models: dataset '" + base.dataset + "' differs from '" + model.dataset + "'");
    }
    GainRow row{model.dataset, model.model_id, base.model_id, model.mean, base.mean,
                100.0 * (model.mean - base.mean)};
    std::vector<double> diffs;
    for (std::size_t i = 0; i < base.seeds.size(); ++i) {
      auto it = by_seed.find(base.seeds[i]);
      if (it != by_seed.end()) diffs.push_back(100.0 * (it->second - base.aurocs[i]));
    }
    row.pairs = diffs.size();
    row.paired_mean = mean_of(diffs);
    row.paired_sd = sample_sd(diffs);
    rows.push_back(row);
  }
  return rows;
}

void write_gain_csv(std::ostream& out, const std::vector<GainRow>& rows) {
  out << "dataset,model,baseline,model_mean_auroc,baseline_mean_auroc,gain_points,pairs,paired_mean_points,"
         "paired_sd_points\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{:.6f},{:.6f},{:+.3f},{},{:+.3f},{:.3f}\n", r.dataset, r.model, r.baseline,
                       r.model_mean, r.baseline_mean, r.gain_points, r.pairs, r.paired_mean, r.paired_sd);
  }
}

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points) {
  out << "fpr,tpr\n";
  for (const auto& p : points) out << fmt::format("{:.17g},{:.17g}\n", p.fpr, p.tpr);
}

void write_eval_csv(std::ostream& out, const std::vector<EvalResult>& results) {
  out << "dataset,model,seed,auroc\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      out << fmt::format("{},{},{},{:.17g}\n", r.dataset, r.model_id, r.seeds[i], r.aurocs[i]);
    }
  }
}

}  // namespace gtt
