#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtt/hpo.hpp"

using namespace gtt;

namespace {

RawTable toy_raw(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::ostringstream os;
  os << "a,b,x,y\n";
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(rng.uniform(0, 4));
    const double x = rng.normal(0, 1);
    os << "k" << a << ",m" << static_cast<int>(rng.uniform(0, 3)) << "," << x << ","
       << ((a >= 2) != (x > 0.5) ? 1 : 0) << "\n";
  }
  std::istringstream in(os.str());
  return parse_csv(in, parse_schema_text("name = toy\nlabel = y\npositive = 1\ncategorical = a, b\ncontinuous = x\n"));
}

GridSpec toy_spec() {
  return parse_grid_spec(
      "lr = 0.01, 0.005\n"
      "step = 5\n"
      "gamma = 0.5\n"
      "dropout = 0\n"
      "heads = 2\n"
      "depth = 1\n"
      "dims = 4, 8\n"
      "seeds = 0, 1\n"
      "transformer_depth = 1\n"
      "max_epochs = 3\n"
      "patience = 2\n"
      "batch_size = 32\n");
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST(GridSpecTest, FullGridSize) {
  GridSpec spec;
  EXPECT_EQ(spec.size(), 17280u);
  EXPECT_EQ(enumerate_grid(spec).size(), 17280u);
}

TEST(GridSpecTest, HeadsTwelveNeverFitsAnyDim) {
  GridSpec spec;
  std::size_t skipped = 0;
  for (const auto& p : enumerate_grid(spec)) {
    if (p.model.heads == 12) EXPECT_FALSE(p.valid);
    skipped += !p.valid;
  }
  // heads 16 with dims 8, and every heads-12 point
  EXPECT_EQ(skipped, 17280u / 4 + 17280u / 4 / 6);
}

TEST(GridSpecTest, SingleValueAxes) {
  GridSpec spec = parse_grid_spec("lr = 0.01\nstep = 5\ngamma = 0.1\ndropout = 0\nheads = 4\ndepth = 2\ndims = 8\n");
  auto points = enumerate_grid(spec);
  ASSERT_EQ(points.size(), 1u);
  EXPECT_TRUE(points[0].valid);
  EXPECT_EQ(points[0].model.gmlp_depth, 2u);
  EXPECT_EQ(points[0].model.mlp_hidden, (std::vector<std::size_t>{8, 8}));
  EXPECT_EQ(points[0].train.lr, 0.01);
}

TEST(GridSpecTest, IndivisibleDimsMarkedSkipped) {
  GridSpec spec = parse_grid_spec("dims = 8\nheads = 16\n");
  for (const auto& p : enumerate_grid(spec)) EXPECT_FALSE(p.valid);
}

TEST(GridSpecTest, LexicographicOrderLastAxisFastest) {
  auto points = enumerate_grid(toy_spec());
  ASSERT_EQ(points.size(), 4u);
  EXPECT_EQ(points[0].train.lr, 0.01);
  EXPECT_EQ(points[0].model.dim, 4u);
  EXPECT_EQ(points[1].model.dim, 8u);
  EXPECT_EQ(points[2].train.lr, 0.005);
  EXPECT_NE(points[0].config_hash, points[1].config_hash);
}

TEST(GridSpecTest, ParseErrorsNameKeyAndLine) {
  try {
    parse_grid_spec("lr = 0.1\ndims = 8, x\n", "grid.txt");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("grid.txt:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dims"), std::string::npos) << msg;
  }
  EXPECT_THROW(parse_grid_spec("lr =\n"), ConfigError);
  EXPECT_THROW(parse_grid_spec("colour = red\n"), ConfigError);
  EXPECT_THROW(parse_grid_spec("head = tree\n"), ConfigError);
  EXPECT_THROW(parse_grid_spec("seeds = 1\n"), ConfigError);
}

TEST(GridSpecTest, CanonicalTextRoundTrips) {
  GridSpec spec = toy_spec();
  spec.activation = {parse_activation("relu"), parse_activation("leaky_relu:0.03")};
  spec.order_seed = 9;
  const std::string text = canonical_text(spec);
  EXPECT_EQ(canonical_text(parse_grid_spec(text)), text);
  EXPECT_EQ(parse_grid_spec(text).hash(), spec.hash());
}

TEST(RunGridTest, ToyGridLogsEveryTrialAndPicksMax) {
  RawTable raw = toy_raw(120, 1);
  const auto path = temp_path("gtt_hpo_toy.jsonl");
  GridOptions options;
  options.log_path = path;
  GridOutcome out = run_grid(toy_spec(), raw, options);
  ASSERT_EQ(out.trials.size(), 4u);
  EXPECT_EQ(out.run, 4u);
  EXPECT_EQ(out.remaining, 0u);
  ASSERT_TRUE(out.best);
  for (const auto& t : out.trials) EXPECT_LE(t.mean, out.trials[*out.best].mean);
  EXPECT_EQ(lines_of(path).size(), 5u);

  auto replayed = read_trial_log(path);
  auto best = select_best(replayed);
  ASSERT_TRUE(best);
  EXPECT_EQ(replayed[*best].config_hash, out.trials[*out.best].config_hash);

  std::ostringstream curve;
  write_dim_curve_csv(curve, out.trials);
  EXPECT_EQ(curve.str().substr(0, 31), "head,dim,best_mean_auroc,trials");
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".timing");
}

TEST(RunGridTest, ResumeSkipsCompletedTrials) {
  RawTable raw = toy_raw(120, 2);
  const auto path = temp_path("gtt_hpo_resume.jsonl");
  std::filesystem::remove(path + ".timing");
  GridOptions options;
  options.log_path = path;
  options.budget = 2;
  GridOutcome first = run_grid(toy_spec(), raw, options);
  EXPECT_EQ(first.run, 2u);
  EXPECT_EQ(first.remaining, 2u);
  const auto before = lines_of(path);

  // simulate a kill during the next write
  { std::ofstream(path, std::ios::app) << "{\"type\":\"trial\",\"ind"; }

  options.resume = true;
  options.budget = 0;
  GridOutcome second = run_grid(toy_spec(), raw, options);
  EXPECT_EQ(second.run, 4u);
  EXPECT_EQ(second.remaining, 0u);
  const auto after = lines_of(path);
  ASSERT_EQ(after.size(), 5u);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(after[i], before[i]);
  EXPECT_EQ(lines_of(path + ".timing").size(), 4u);  // each trial ran once

  GridSpec other = toy_spec();
  other.lr = {0.1};
  EXPECT_THROW(run_grid(other, raw, options), ConfigError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".timing");
}

TEST(RunGridTest, BudgetCountsOnlyRunTrials) {
  RawTable raw = toy_raw(120, 3);
  GridSpec spec = toy_spec();
  spec.heads = {2, 3};  // dims 4 and 8 are not divisible by 3
  GridOptions options;
  options.budget = 3;
  GridOutcome out = run_grid(spec, raw, options);
  EXPECT_EQ(out.run, 3u);
  EXPECT_EQ(out.skipped + out.run + out.remaining, out.grid_size);
  EXPECT_GE(out.skipped, 1u);
}

TEST(RunGridTest, ParallelismDoesNotChangeRecords) {
  RawTable raw = toy_raw(120, 4);
  GridSpec spec = toy_spec();
  spec.dropout = {0.0, 0.2};
  spec.order_seed = 5;
  auto run = [&](std::size_t parallel) {
    GridOptions options;
    options.log_path = temp_path("gtt_hpo_par" + std::to_string(parallel) + ".jsonl");
    options.parallel = parallel;
    run_grid(spec, raw, options);
    auto lines = lines_of(options.log_path);
    std::sort(lines.begin(), lines.end());
    std::filesystem::remove(options.log_path);
    std::filesystem::remove(options.log_path + ".timing");
    return lines;
  };
  EXPECT_EQ(run(1), run(4));
}
