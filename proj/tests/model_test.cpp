#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gtt/grad_check.hpp"
#include "gtt/model.hpp"
#include "gtt/train.hpp"

using namespace gtt;

namespace {

// 17 categorical columns with small vocabularies, 2 continuous columns.
std::vector<std::size_t> blastchar_like_vocab() {
  return {2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 2, 4, 73};
}

struct RandomBatch {
  std::size_t size;
  std::vector<std::int64_t> ids;
  Tensor cont;
  std::vector<double> labels;
};

RandomBatch random_batch(std::span<const std::size_t> vocab, std::size_t c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  RandomBatch b{n, {}, {}, {}};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t v : vocab) b.ids.push_back(static_cast<std::int64_t>(rng.uniform(0, static_cast<double>(v) + 1)));
    b.labels.push_back(r % 2 == 0 ? 1.0 : 0.0);
  }
  if (c > 0) {
    std::vector<double> values(n * c);
    for (auto& v : values) v = rng.normal(0, 1);
    b.cont = Tensor({n, c}, values);
  }
  return b;
}

ModelConfig small_config(HeadKind head) {
  ModelConfig c;
  c.head = head;
  c.transformer_depth = 1;
  c.heads = 4;
  c.dim = 8;
  c.gmlp_depth = 2;
  c.mlp_hidden = {16, 8};
  return c;
}

}  // namespace

TEST(ModelConfigTest, RejectsBadConfigs) {
  ModelConfig c;
  c.dim = 10;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  const std::vector<std::size_t> vocab{3};
  EXPECT_THROW(build_model(c, vocab, 0, 1), ConfigError);
  c = ModelConfig{};
  c.gmlp_depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.head = HeadKind::kMlp;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(parse_head_kind("tree"), ConfigError);
}

TEST(ModelConfigTest, JsonRoundTrip) {
  ModelConfig c = small_config(HeadKind::kMlp);
  c.activation = parse_activation("leaky_relu:0.03");
  c.dropout = 0.2;
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
}

TEST(ModelTest, BlastcharShapedForward) {
  const auto vocab = blastchar_like_vocab();
  Model m = build_model(small_config(HeadKind::kGmlp), vocab, 2, 7);
  auto b = random_batch(vocab, 2, 3, 1);
  Tensor out = forward(m, b.ids, b.cont, 3, ForwardContext{});
  EXPECT_EQ(out.shape(), (Shape{3, 1}));
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(m.tokens(), 18u);
}

TEST(ModelTest, EveryHeadKindProducesColumnOfLogits) {
  const std::vector<std::size_t> vocab{3, 5, 2};
  for (HeadKind head : {HeadKind::kGmlp, HeadKind::kMlp, HeadKind::kNone}) {
    Model m = build_model(small_config(head), vocab, 4, 3);
    auto b = random_batch(vocab, 4, 5, 2);
    EXPECT_EQ(forward(m, b.ids, b.cont, 5, ForwardContext{}).shape(), (Shape{5, 1})) << to_string(head);
  }
}

TEST(ModelTest, SameSeedGivesIdenticalParameters) {
  const auto vocab = blastchar_like_vocab();
  Model a = build_model(small_config(HeadKind::kGmlp), vocab, 2, 99);
  Model b = build_model(small_config(HeadKind::kGmlp), vocab, 2, 99);
  Model c = build_model(small_config(HeadKind::kGmlp), vocab, 2, 100);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(ModelTest, HeadSwapKeepsUpstreamIdentical) {
  const auto vocab = blastchar_like_vocab();
  Model gated = build_model(small_config(HeadKind::kGmlp), vocab, 2, 5);
  Model baseline = build_model(small_config(HeadKind::kMlp), vocab, 2, 5);
  const auto up_a = gated.upstream_parameters();
  const auto up_b = baseline.upstream_parameters();
  ASSERT_EQ(up_a.size(), up_b.size());
  for (std::size_t i = 0; i < up_a.size(); ++i) {
    EXPECT_EQ(up_a[i].name, up_b[i].name);
    EXPECT_TRUE(std::equal(up_a[i].tensor.values().begin(), up_a[i].tensor.values().end(),
                           up_b[i].tensor.values().begin()))
        << up_a[i].name;
  }
}

TEST(ModelTest, NoContinuousColumnsOmitsToken) {
  const std::vector<std::size_t> vocab{3, 4};
  Model m = build_model(small_config(HeadKind::kGmlp), vocab, 0, 1);
  EXPECT_EQ(m.tokens(), 2u);
  auto b = random_batch(vocab, 0, 3, 4);
  EXPECT_EQ(forward(m, b.ids, Tensor(), 3, ForwardContext{}).shape(), (Shape{3, 1}));
  for (const auto& p : m.parameters()) EXPECT_EQ(p.name.find("cont"), std::string::npos) << p.name;
}

TEST(ModelTest, ZeroTransformerDepthFeedsEmbeddingsToHead) {
  const std::vector<std::size_t> vocab{3, 4};
  ModelConfig c = small_config(HeadKind::kMlp);
  c.transformer_depth = 0;
  Model m = build_model(c, vocab, 1, 1);
  EXPECT_TRUE(m.transformer.empty());
  auto b = random_batch(vocab, 1, 2, 4);
  EXPECT_EQ(forward(m, b.ids, b.cont, 2, ForwardContext{}).shape(), (Shape{2, 1}));
}

TEST(ModelTest, InputErrors) {
  const std::vector<std::size_t> vocab{3, 4};
  Model m = build_model(small_config(HeadKind::kGmlp), vocab, 2, 1);
  auto b = random_batch(vocab, 2, 3, 4);
  EXPECT_THROW(forward(m, b.ids, b.cont, 2, ForwardContext{}), ShapeError);
  EXPECT_THROW(forward(m, b.ids, Tensor::zeros({3, 3}), 3, ForwardContext{}), ShapeError);
  std::vector<double> bad(6, 0.0);
  bad[3] = std::nan("");
  EXPECT_THROW(forward(m, b.ids, Tensor({3, 2}, bad), 3, ForwardContext{}), DataError);
}

TEST(ModelTest, EvalForwardIsDeterministicWithDropout) {
  const std::vector<std::size_t> vocab{3, 4};
  ModelConfig c = small_config(HeadKind::kGmlp);
  c.dropout = 0.5;
  Model m = build_model(c, vocab, 2, 1);
  auto b = random_batch(vocab, 2, 4, 4);
  Tensor x = forward(m, b.ids, b.cont, 4, ForwardContext{});
  Tensor y = forward(m, b.ids, b.cont, 4, ForwardContext{});
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(ModelTest, BceGradientsMatchFiniteDifferences) {
  const std::vector<std::size_t> vocab{3, 4, 2};
  for (HeadKind head : {HeadKind::kGmlp, HeadKind::kMlp}) {
    Model m = build_model(small_config(head), vocab, 2, 11);
    auto b = random_batch(vocab, 2, 4, 12);
    ParamList params = m.parameters();
    std::vector<Tensor> tensors;
    for (const auto& p : params) tensors.push_back(p.tensor);
    auto loss = [&] { return bce_with_logits(forward(m, b.ids, b.cont, 4, ForwardContext{}), b.labels); };
    EXPECT_LT(grad_check_params(loss, tensors), 1e-4) << to_string(head);
  }
}

TEST(ModelTest, ParamCountMatchesEnumeration) {
  const std::vector<std::size_t> vocab{3, 4};
  ModelConfig c = small_config(HeadKind::kNone);
  c.transformer_depth = 0;
  Model m = build_model(c, vocab, 0, 1);
  // embeddings (4 + 5 rows) x 8, readout 16 -> 1 with bias
  EXPECT_EQ(param_count(m), 9u * 8u + 17u);
}

TEST(ModelTest, GmlpDepthAddsFixedBlockSize) {
  const std::vector<std::size_t> vocab{3, 4, 5};
  ModelConfig c = small_config(HeadKind::kGmlp);
  c.gmlp_depth = 1;
  const std::size_t p1 = param_count(build_model(c, vocab, 2, 1));
  c.gmlp_depth = 2;
  const std::size_t p2 = param_count(build_model(c, vocab, 2, 1));
  c.gmlp_depth = 4;
  const std::size_t p4 = param_count(build_model(c, vocab, 2, 1));
  EXPECT_GT(p2, p1);
  EXPECT_EQ(p4 - p2, 2 * (p2 - p1));
}

TEST(ModelTest, AdapterAppearsWhenGmlpWidthDiffers) {
  const std::vector<std::size_t> vocab{3, 4};
  ModelConfig c = small_config(HeadKind::kGmlp);
  c.gmlp_dim = 32;
  Model m = build_model(c, vocab, 2, 1);
  EXPECT_TRUE(m.adapter.weight.defined());
  auto b = random_batch(vocab, 2, 3, 4);
  EXPECT_EQ(forward(m, b.ids, b.cont, 3, ForwardContext{}).shape(), (Shape{3, 1}));
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const std::vector<std::size_t> vocab{2, 3};
  DatasetSchema schema;
  schema.name = "toy";
  schema.label = "y";
  schema.positive = "1";
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    CategoricalEncoder enc;
    enc.name = "c" + std::to_string(j);
    for (std::size_t k = 0; k < vocab[j]; ++k) {
      enc.vocab.push_back("v" + std::to_string(k));
      enc.index[enc.vocab.back()] = static_cast<std::int64_t>(k);
    }
    schema.categorical.push_back(enc);
  }
  schema.continuous.push_back({"x", 0.1, 3.0000000000000004, -0.2});

  ModelConfig c = small_config(HeadKind::kGmlp);
  c.activation = parse_activation("selu");
  Model m = build_model(c, schema, 42);
  // move weights away from their init values
  for (auto& p : m.parameters()) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v = v * 1.1 + 1e-17;
  }
  const auto path = (std::filesystem::temp_directory_path() / "gtt_model_test.ckpt").string();
  save_checkpoint(path, m, schema, {{"split_seed", 3}});
  Checkpoint ck = load_checkpoint(path);
  std::remove(path.c_str());

  EXPECT_EQ(ck.model.config, c);
  EXPECT_EQ(snapshot(ck.model), snapshot(m));
  EXPECT_EQ(ck.schema.fingerprint(), schema.fingerprint());
  EXPECT_EQ(ck.schema.continuous[0].stddev, 3.0000000000000004);
  EXPECT_EQ(ck.schema.categorical[1].encode("v2"), 2);
  EXPECT_EQ(ck.meta.at("split_seed").get<int>(), 3);
}

TEST(CheckpointTest, RejectsForeignFiles) {
  const auto path = (std::filesystem::temp_directory_path() / "gtt_not_a_ckpt.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("hello world", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint(path), Error);
}
