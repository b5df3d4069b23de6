#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gtt/metrics.hpp"
#include "gtt/train.hpp"

using namespace gtt;

namespace {

// Two categorical columns and two continuous distractors; the label is an
// interaction of the categorical columns, so no single feature separates it.
Dataset separable_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.rows = n;
  d.n_categorical = 2;
  d.n_continuous = 2;
  for (std::size_t r = 0; r < n; ++r) {
    const auto a = static_cast<std::int64_t>(rng.uniform(0, 4));
    const auto b = static_cast<std::int64_t>(rng.uniform(0, 3));
    const double x = rng.normal(0, 1);
    d.cat_ids.push_back(a);
    d.cat_ids.push_back(b);
    d.cont.push_back(x);
    d.cont.push_back(rng.normal(0, 1));
    d.labels.push_back((a >= 2) != (b == 1) ? 1.0 : 0.0);
  }
  return d;
}

const std::vector<std::size_t> kVocab{4, 3};

Splits all_train(std::size_t n) {
  Splits s;
  for (std::size_t i = 0; i < n; ++i) s.train.push_back(i);
  s.validation = s.train;
  return s;
}

ModelConfig tiny(HeadKind head) {
  ModelConfig c;
  c.head = head;
  c.transformer_depth = 1;
  c.heads = 2;
  c.dim = 8;
  c.gmlp_depth = 1;
  c.mlp_hidden = {16};
  return c;
}

}  // namespace

TEST(BceTest, AnalyticValues) {
  EXPECT_NEAR(bce_with_logits(Tensor({1}, {0.0}), std::vector<double>{1}).item(), std::log(2.0), 1e-15);
  const double big = bce_with_logits(Tensor({1}, {40.0}), std::vector<double>{1}).item();
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_LT(big, 1e-16);
  EXPECT_NEAR(bce_with_logits(Tensor({1}, {-800.0}), std::vector<double>{1}).item(), 800.0, 1e-9);
}

TEST(BceTest, MatchesNaiveFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z, y;
    double naive = 0.0;
    for (int i = 0; i < 16; ++i) {
      z.push_back(rng.normal(0, 4));
      y.push_back(rng.uniform(0, 1) < 0.5 ? 1.0 : 0.0);
      const double s = 1.0 / (1.0 + std::exp(-z.back()));
      naive -= y.back() * std::log(s) + (1 - y.back()) * std::log(1 - s);
    }
    EXPECT_NEAR(bce_with_logits(Tensor({16, 1}, z), y).item(), naive / 16, 1e-10);
  }
}

TEST(BceTest, GradientIsSigmoidMinusLabel) {
  GraphScope scope;
  Tensor z({3, 1}, {0.0, 2.0, -1.0}, true);
  Tensor loss = bce_with_logits(z, std::vector<double>{1, 0, 1});
  scope.graph().backward(loss);
  const auto g = z.grad();
  EXPECT_NEAR(g[0], (0.5 - 1) / 3, 1e-15);
  EXPECT_NEAR(g[1], (1 / (1 + std::exp(-2.0))) / 3, 1e-15);
  EXPECT_NEAR(g[2], (1 / (1 + std::exp(1.0)) - 1) / 3, 1e-15);
}

TEST(BceTest, Errors) {
  EXPECT_THROW(bce_with_logits(Tensor({2, 1}, {0.0, NAN}), std::vector<double>{1, 0}), Error);
  EXPECT_THROW(bce_with_logits(Tensor({2, 1}, {0.0, 1.0}), std::vector<double>{1}), ShapeError);
}

TEST(ScheduleTest, StepDecay) {
  TrainConfig c;
  c.lr = 0.05;
  c.gamma = 0.1;
  c.step = 10;
  EXPECT_EQ(lr_at_epoch(c, 9), 0.05);
  EXPECT_NEAR(lr_at_epoch(c, 10), 0.005, 1e-18);
  c.gamma = 1.0;
  EXPECT_EQ(lr_at_epoch(c, 1000), 0.05);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.step = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 3;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  Tensor w({3}, {1.0, -2.0, 0.5}, true);
  grad_buffer(*w.data()).assign(3, 0.0);
  AdamState state;
  adam_step({{"w", w}}, state, 0.1);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], -2.0);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Tensor w({2}, {1.0, 1.0}, true);
  grad_buffer(*w.data()) = {0.3, -7.0};
  AdamState state;
  adam_step({{"w", w}}, state, 0.01);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
  EXPECT_NEAR(w[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], 1.0 + 0.01 * 7.0 / (7.0 + 1e-8), 1e-15);
}

TEST(AdamTest, NonFiniteGradientAborts) {
  Tensor w({1}, {1.0}, true);
  grad_buffer(*w.data()) = {INFINITY};
  AdamState state;
  EXPECT_THROW(adam_step({{"weights", w}}, state, 0.01), DivergenceError);
}

TEST(AdamTest, SmallStepDecreasesBatchLoss) {
  Dataset d = separable_dataset(40, 3);
  std::vector<std::size_t> rows(40);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m = build_model(tiny(seed % 2 ? HeadKind::kMlp : HeadKind::kGmlp), kVocab, 2, seed);
    Batch b = d.gather(rows);
    ParamList params = m.parameters();
    AdamState state;
    double before;
    {
      GraphScope scope;
      Tensor loss = bce_with_logits(forward(m, b, ForwardContext{}), b.labels);
      before = loss.item();
      scope.graph().backward(loss);
      adam_step(params, state, 1e-5);
    }
    NoGradGuard guard;
    EXPECT_LT(bce_with_logits(forward(m, b, ForwardContext{}), b.labels).item(), before) << seed;
  }
}

TEST(TrainLoopTest, EarlyStopsAfterPatienceAndRestoresBest) {
  Dataset d = separable_dataset(60, 4);
  Model m = build_model(tiny(HeadKind::kGmlp), kVocab, 2, 1);
  TrainConfig c;
  c.patience = 3;
  c.max_epochs = 50;
  c.batch_size = 16;
  std::vector<std::vector<double>> per_epoch;
  ValidationScorer worsening = [&](const Model& model, std::size_t epoch) {
    per_epoch.push_back(snapshot(model)[0]);
    return 1.0 - 0.1 * static_cast<double>(epoch);
  };
  TrainReport r = train_loop(m, d, all_train(60), c, worsening);
  EXPECT_EQ(r.epochs.size(), 4u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.stop_reason, StopReason::kEarlyStop);
  EXPECT_DOUBLE_EQ(r.best_val_auroc, 0.9);
  EXPECT_EQ(snapshot(m)[0], per_epoch[0]);
}

TEST(TrainLoopTest, LearningRateTraceFollowsSchedule) {
  Dataset d = separable_dataset(40, 5);
  Model m = build_model(tiny(HeadKind::kMlp), kVocab, 2, 1);
  TrainConfig c;
  c.lr = 0.05;
  c.gamma = 0.2;
  c.step = 3;
  c.max_epochs = 10;
  c.patience = 100;
  std::ostringstream metrics;
  TrainReport r = train_loop(m, d, all_train(40), c, [](const Model&, std::size_t) { return 0.5; }, &metrics);
  ASSERT_EQ(r.epochs.size(), 10u);
  EXPECT_EQ(r.stop_reason, StopReason::kMaxEpochs);
  for (const auto& e : r.epochs) EXPECT_EQ(e.lr, lr_at_epoch(c, e.epoch - 1));
  std::istringstream lines(metrics.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), ++count);
    EXPECT_EQ(j.at("lr").get<double>(), r.epochs[count - 1].lr);
  }
  EXPECT_EQ(count, 10u);
}

TEST(TrainLoopTest, BestCheckpointNeverBelowRecordedMax) {
  Dataset d = separable_dataset(200, 6);
  Splits s = split_indices(200, 1);
  Model m = build_model(tiny(HeadKind::kGmlp), kVocab, 2, 3);
  TrainConfig c;
  c.max_epochs = 15;
  c.patience = 4;
  c.batch_size = 32;
  TrainReport r = train_loop(m, d, s, c);
  double best = 0.0;
  for (const auto& e : r.epochs) best = std::max(best, e.val_auroc);
  EXPECT_EQ(r.best_val_auroc, best);
  std::vector<double> y;
  for (std::size_t i : s.validation) y.push_back(d.labels[i]);
  EXPECT_EQ(auroc(predict(m, d, s.validation), y), best);
}

TEST(TrainLoopTest, RepeatedRunsAreIdentical) {
  Dataset d = separable_dataset(100, 7);
  Splits s = split_indices(100, 2);
  TrainConfig c;
  c.max_epochs = 5;
  c.batch_size = 16;
  c.seed = 9;
  ModelConfig mc = tiny(HeadKind::kGmlp);
  mc.dropout = 0.1;
  Model a = build_model(mc, kVocab, 2, 4);
  Model b = build_model(mc, kVocab, 2, 4);
  TrainReport ra = train_loop(a, d, s, c);
  TrainReport rb = train_loop(b, d, s, c);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].loss, rb.epochs[i].loss);
    EXPECT_EQ(ra.epochs[i].val_auroc, rb.epochs[i].val_auroc);
  }
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(TrainLoopTest, OverfitsSeparableData) {
  Dataset d = separable_dataset(200, 8);
  Splits s = all_train(200);
  std::vector<double> y = d.labels;
  for (HeadKind head : {HeadKind::kGmlp, HeadKind::kMlp}) {
    Model m = build_model(tiny(head), kVocab, 2, 5);
    TrainConfig c;
    c.lr = 0.01;
    c.gamma = 1.0;
    c.max_epochs = 200;
    c.patience = 200;
    c.batch_size = 32;
    ValidationScorer train_auroc = [&](const Model& model, std::size_t) {
      return auroc(predict(model, d, s.train), y);
    };
    TrainReport r = train_loop(m, d, s, c, train_auroc);
    EXPECT_GT(r.best_val_auroc, 0.999) << to_string(head);
    EXPECT_LT(r.epochs.back().loss, 0.05) << to_string(head);
  }
}

TEST(TrainLoopTest, RejectsMismatchedDataset) {
  Dataset d = separable_dataset(40, 9);
  const std::vector<std::size_t> vocab{4, 3, 2};
  Model m = build_model(tiny(HeadKind::kGmlp), vocab, 2, 1);
  EXPECT_THROW(train_loop(m, d, all_train(40), TrainConfig{}), ShapeError);
}
