#include "gtt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "gtt/error.hpp"
#include "gtt/metrics.hpp"

namespace gtt {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must be in (0, 1]");
  if (step == 0) throw ConfigError("train: step must be >= 1");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},         {"gamma", c.gamma},           {"step", c.step},
          {"patience", c.patience}, {"max_epochs", c.max_epochs}, {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.step = j.at("step").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  const std::size_t n = logits.numel();
  const bool column = logits.dim() == 2 && logits.shape()[1] == 1;
  if (!(logits.dim() == 1 || column) || n != labels.size() || n == 0) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto z = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(z[i])) throw DivergenceError("bce_with_logits: NaN logit at row " + std::to_string(i));
    total += std::log1p(std::exp(-std::abs(z[i]))) + std::max(z[i], 0.0) - z[i] * labels[i];
  }
  NodeSpec spec;
  spec.shape = {};
  spec.values = {total / static_cast<double>(n)};
  spec.inputs = {logits};
  std::vector<double> y(labels.begin(), labels.end());
  auto src = logits.data();
  spec.backward = [src, y = std::move(y)](const std::vector<double>& g) {
    auto& gz = grad_buffer(*src);
    const double scale = g[0] / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double zi = src->values[i];
      // sigmoid without overflow on either side
      const double e = std::exp(-std::abs(zi));
      const double s = zi >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      gz[i] += scale * (s - y[i]);
    }
  };
  return make_result(std::move(spec));
}

double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
  return config.lr * std::pow(config.gamma, static_cast<double>(epoch / config.step));
}

void adam_step(const ParamList& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: optimizer state does not match parameters");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.data()->grad) {
      if (!std::isfinite(g)) throw DivergenceError("adam_step: non-finite gradient in " + p.name);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& grad = params[i].tensor.data()->grad;
    if (grad.empty()) continue;  // no path from the loss; leave moments as they are
    Tensor t = params[i].tensor;
    auto values = t.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
      values[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kEarlyStop: return "early_stop";
    case StopReason::kMaxEpochs: return "max_epochs";
    case StopReason::kDiverged: return "diverged";
  }
  return "?";
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"val_auroc", r.val_auroc}, {"lr", r.lr}};
}

std::vector<double> predict(const Model& model, const Dataset& data, std::span<const std::size_t> rows,
                            std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto chunk = rows.subspan(start, std::min(batch_size, rows.size() - start));
    Tensor logits = forward(model, data.gather(chunk), ForwardContext{});
    out.insert(out.end(), logits.values().begin(), logits.values().end());
  }
  return out;
}

TrainReport train_loop(Model& model, const Dataset& data, const Splits& splits, const TrainConfig& config,
                       std::ostream* metrics) {
  std::vector<double> val_labels;
  for (std::size_t idx : splits.validation) val_labels.push_back(data.labels[idx]);
  ValidationScorer scorer = [&](const Model& m, std::size_t) {
    return auroc(predict(m, data, splits.validation), val_labels);
  };
  return train_loop(model, data, splits, config, scorer, metrics);
}

TrainReport train_loop(Model& model, const Dataset& data, const Splits& splits, const TrainConfig& config,
                       const ValidationScorer& scorer, std::ostream* metrics) {
  config.validate();
  if (data.n_categorical != model.n_categorical || data.n_continuous != model.n_continuous) {
    throw ShapeError("train_loop: dataset has " + std::to_string(data.n_categorical) + "+" +
                     std::to_string(data.n_continuous) + " columns, model expects " +
                     std::to_string(model.n_categorical) + "+" + std::to_string(model.n_continuous));
  }
  if (splits.train.empty()) throw DataError("train_loop: empty training split");

  Rng shuffle_rng(config.seed, Stream::kShuffle);
  Rng dropout_rng(config.seed, Stream::kDropout);
  const ParamList params = model.parameters();
  AdamState adam;
  TrainReport report;
  std::vector<std::vector<double>> best = snapshot(model);
  std::size_t stale = 0;
  std::vector<std::size_t> order = splits.train;

  for (std::size_t e0 = 0; e0 < config.max_epochs; ++e0) {
    const double lr = lr_at_epoch(config, e0);
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const auto rows = std::span<const std::size_t>(order).subspan(
            start, std::min(config.batch_size, order.size() - start));
        Batch batch = data.gather(rows);
        GraphScope scope;
        for (const auto& p : params) p.tensor.data()->grad.clear();
        Tensor loss = bce_with_logits(forward(model, batch, ForwardContext{true, &dropout_rng}), batch.labels);
        if (!std::isfinite(loss.item())) throw DivergenceError("non-finite training loss");
        scope.graph().backward(loss);
        adam_step(params, adam, lr);
        loss_sum += loss.item() * static_cast<double>(rows.size());
      }
    } catch (const DivergenceError& err) {
      report.stop_reason = StopReason::kDiverged;
      report.message = "epoch " + std::to_string(e0 + 1) + ": " + err.what();
      break;
    }

    EpochRecord record{e0 + 1, loss_sum / static_cast<double>(order.size()), scorer(model, e0 + 1), lr};
    report.epochs.push_back(record);
    if (metrics) *metrics << to_json(record).dump() << '\n';

    if (report.best_epoch == 0 || record.val_auroc > report.best_val_auroc) {
      report.best_epoch = record.epoch;
      report.best_val_auroc = record.val_auroc;
      best = snapshot(model);
      stale = 0;
    } else if (++stale >= config.patience) {
      report.stop_reason = StopReason::kEarlyStop;
      break;
    }
  }
  for (const auto& p : params) p.tensor.data()->grad.clear();
  restore(model, best);
  return report;
}

}  // namespace gtt
