#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gtt/cli.hpp"
#include "gtt/config.hpp"
#include "gtt/metrics.hpp"
#include "gtt/rng.hpp"

using namespace gtt;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<RocPoint> read_roc(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<RocPoint> pts;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    pts.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return pts;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("gtt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    setenv("GTT_OUTPUT_ROOT", (dir_ / "runs").c_str(), 1);

    Rng rng(11);
    std::ostringstream os;
    os << "id,a,b,x,y\n";
    for (int i = 0; i < 160; ++i) {
      const int a = static_cast<int>(rng.uniform(0, 4));
      const int b = static_cast<int>(rng.uniform(0, 3));
      const double x = rng.normal(0, 1);
      const bool pos = (a >= 2) != (b == 1);
      os << i << ",k" << a << ",m" << b << "," << x << "," << (pos ? "yes" : "no") << "\n";
    }
    write(dir_ / "toy.csv", os.str());
    write(dir_ / "toy.schema",
          "name = toy\nlabel = y\npositive = yes\ncategorical = a, b\ncontinuous = x\nignore = id\n");
    write(dir_ / "run.ini",
          "[data]\ncsv = toy.csv\nschema = toy.schema\n"
          "[model]\ntransformer_depth = 1\nheads = 2\ndim = 8\ngmlp_depth = 1\nmlp_hidden = 16\n"
          "[train]\nlr = 0.01\ngamma = 1\nmax_epochs = 6\nbatch_size = 32\n"
          "[run]\nseeds = 0, 1\noutput = out\n");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--lr"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--config", path("missing.ini")}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(CliTest, MissingSchemaNamesThePath) {
  auto r = run({"train", "--data", path("toy.csv"), "--schema", path("nope.schema")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("nope.schema"), std::string::npos) << r.err;
}

TEST_F(CliTest, BadConfigValueNamesKeyAndLine) {
  write(dir_ / "bad.ini", "[data]\ncsv = toy.csv\nschema = toy.schema\n[train]\nlr = fast\n");
  auto r = run({"train", "--config", path("bad.ini")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("bad.ini:5"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("lr"), std::string::npos) << r.err;
}

TEST_F(CliTest, BadDataIsRuntimeError) {
  write(dir_ / "broken.csv", "id,a,b,x,y\n1,k0,m0,abc,yes\n");
  auto r = run({"dataset-report", "--data", path("broken.csv"), "--schema", path("toy.schema")});
  EXPECT_EQ(r.code, kExitRuntime);
}

TEST_F(CliTest, WrittenConfigRoundTrips) {
  ASSERT_EQ(run({"train", "--config", path("run.ini"), "--seed", "1", "--head", "mlp"}).code, kExitOk);
  const fs::path written = dir_ / "runs" / "out" / "config.ini";
  const RunConfig a = load_run_config(written.string());
  EXPECT_EQ(a.model.head, HeadKind::kMlp);
  EXPECT_EQ(a.seeds, std::vector<std::uint64_t>{1});
  EXPECT_EQ(canonical_text(a), slurp(written));
}

TEST_F(CliTest, EvaluateReproducesTrainingTestScore) {
  auto t = run({"train", "--config", path("run.ini"), "--seed", "2"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const fs::path out = dir_ / "runs" / "out";
  for (const char* f : {"config.ini", "metrics.jsonl", "model.ckpt", "summary.json", "roc_test.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  const double trained = summary.at("test_auroc").get<double>();
  EXPECT_EQ(trapezoid_area(read_roc(out / "roc_test.csv")), trained);

  auto e = run({"evaluate", "--checkpoint", (out / "model.ckpt").string(), "--roc", path("eval_roc.csv")});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  ASSERT_EQ(e.out.rfind("auroc ", 0), 0u);
  const double evaluated = std::stod(e.out.substr(6));
  EXPECT_NEAR(evaluated, trained, 1e-12);
  EXPECT_NEAR(trapezoid_area(read_roc(path("eval_roc.csv"))), evaluated, 1e-12);

  // one metrics line per epoch
  std::istringstream lines(slurp(out / "metrics.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, summary.at("epochs_run").get<std::size_t>());
}

TEST_F(CliTest, EvaluateRejectsForeignSchema) {
  ASSERT_EQ(run({"train", "--config", path("run.ini"), "--seed", "0"}).code, kExitOk);
  write(dir_ / "other.schema", "name = toy\nlabel = y\npositive = yes\ncategorical = a\ncontinuous = x\nignore = id, b\n");
  auto r = run({"evaluate", "--checkpoint", (dir_ / "runs" / "out" / "model.ckpt").string(), "--schema",
                path("other.schema")});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("fingerprint"), std::string::npos) << r.err;
}

TEST_F(CliTest, DatasetReportCounts) {
  auto r = run({"dataset-report", "--data", path("toy.csv"), "--schema", path("toy.schema"), "--output", "rep"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("toy,160,3,2,1,"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "runs" / "rep" / "correlation.csv"));
}

TEST_F(CliTest, CompareWritesTables) {
  auto r = run({"compare", "--config", path("run.ini"), "--max-epochs", "2", "--models", "gmlp,logreg"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const fs::path out = dir_ / "runs" / "out";
  EXPECT_TRUE(fs::exists(out / "eval.csv"));
  EXPECT_TRUE(fs::exists(out / "roc_gmlp_seed1.csv"));
  std::istringstream gains(slurp(out / "gains.csv"));
  std::string line;
  std::getline(gains, line);
  std::getline(gains, line);
  EXPECT_EQ(line.rfind("toy,gmlp,logreg,", 0), 0u) << line;
}

TEST_F(CliTest, TuneWritesLogBestAndCurve) {
  write(dir_ / "grid.txt",
        "lr = 0.01\nstep = 5\ngamma = 0.5\ndropout = 0\nheads = 2\ndepth = 1\ndims = 4, 8\nseeds = 0, 1\n"
        "transformer_depth = 1\nmax_epochs = 2\nbatch_size = 32\n");
  auto r = run({"tune", "--config", path("run.ini"), "--grid", path("grid.txt")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const fs::path out = dir_ / "runs" / "out";
  for (const char* f : {"trials.jsonl", "best_config.ini", "dim_curve.csv", "grid.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_NO_THROW(load_run_config((out / "best_config.ini").string()));
  // rerunning with --resume has nothing left to do
  auto again = run({"tune", "--config", path("run.ini"), "--grid", path("grid.txt"), "--resume"});
  EXPECT_EQ(again.code, kExitOk);
  EXPECT_EQ(again.out.find("trial 1/"), std::string::npos) << again.out;
  EXPECT_NE(again.out.find("remaining 0"), std::string::npos) << again.out;
}
