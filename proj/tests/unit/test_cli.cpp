#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dfkd/config.hpp"
#include "temp_dir.hpp"

using namespace dfkd;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Tiny distillation config writing under `root`.
fs::path write_tiny_config(const TempDir& dir) {
  ExperimentConfig c = ExperimentConfig::desk_default();
  c.dataset.per_class = 30;
  c.teacher_train.epochs = 5;
  c.teacher_train.batch = 32;
  c.schedule = {.epochs = 3, .iterations = 1, .generator_steps = 1, .student_steps = 2, .noise_batch = 32,
                .memory_batch = 8};
  c.replay.bank = {.capacity = 2, .subset_size = 16, .push_frequency = 1};
  c.checkpoint_every = 2;
  c.output_dir = (dir / "runs").string();
  save_config(dir / "tiny.json", c);
  return dir / "tiny.json";
}

std::vector<fs::path> run_dirs(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { unsetenv("DFKD_OUTPUT_ROOT"); }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"distill", "--mode", "maml"}).code, cli::kConfigError);
  EXPECT_EQ(run({"verify", "--suite", "nope"}).code, cli::kConfigError);
  EXPECT_EQ(run({"verify", "--tolerance-scale", "-1"}).code, cli::kConfigError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kConfigError);
  EXPECT_EQ(run({"analyze"}).code, cli::kConfigError);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  TempDir dir;
  std::ofstream(dir / "bad.json") << R"({"schedule": {"epochz": 1}})";
  const auto r = run({"distill", "--config", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("schedule.epochz"), std::string::npos);
}

TEST_F(Cli, DistillWritesRunDirectoryThenAnalyze) {
  TempDir dir;
  const fs::path cfg = write_tiny_config(dir);
  const auto r = run({"distill", "--config", cfg.string(), "--seed", "5", "--quiet"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto dirs = run_dirs(dir / "runs");
  ASSERT_EQ(dirs.size(), 1u);
  const fs::path rd = dirs[0];
  for (const char* f : {"config.json", "runlog.jsonl", "diagnostics.jsonl", "teacher.ckpt", "checkpoints/final.ckpt",
                        "checkpoints/epoch_0002.ckpt"}) {
    EXPECT_TRUE(fs::exists(rd / f)) << f;
  }
  EXPECT_EQ(load_config(rd / "config.json").seed, 5u);
  std::istringstream log(slurp(rd / "runlog.jsonl"));
  std::string line;
  int epoch = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], ++epoch);
    EXPECT_EQ(j["mode"], "meta");
  }
  EXPECT_EQ(epoch, 3);
  const auto first_diag = nlohmann::json::parse(slurp(rd / "diagnostics.jsonl").substr(0, slurp(rd / "diagnostics.jsonl").find('\n')));
  EXPECT_EQ(first_diag["kind"], "teacher");

  // A second run with the same config never reuses the directory.
  ASSERT_EQ(run({"distill", "--config", cfg.string(), "--seed", "5", "--quiet", "--mode", "no_replay",
                 "--teacher", (rd / "teacher.ckpt").string()})
                .code,
            cli::kOk);
  const auto dirs2 = run_dirs(dir / "runs");
  ASSERT_EQ(dirs2.size(), 2u);
  const fs::path rd2 = dirs2[0] == rd ? dirs2[1] : dirs2[0];
  EXPECT_FALSE(fs::exists(rd2 / "teacher.ckpt"));

  const auto a = run({"analyze", (rd / "runlog.jsonl").string(), "--percentiles", "0,40"});
  ASSERT_EQ(a.code, cli::kOk) << a.err;
  EXPECT_NE(a.out.find("percentile,mu,sigma2,n_epochs\n0,"), std::string::npos);
  EXPECT_NE(a.out.find("\n40,"), std::string::npos);
  EXPECT_NE(a.out.find("epoch,acc,cumulative_mean\n1,"), std::string::npos);

  const auto b = run({"analyze", (rd / "runlog.jsonl").string(), (rd2 / "runlog.jsonl").string(), "--out",
                      (dir / "out").string()});
  ASSERT_EQ(b.code, cli::kOk) << b.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "run1_table.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "run2_cumulative.csv"));
  const std::string cmp = slurp(dir / "out" / "comparison.csv");
  EXPECT_EQ(cmp.rfind("mode,runs,statistic,median\n", 0), 0u);
  EXPECT_NE(cmp.find("meta,1,acc_max,"), std::string::npos);
  EXPECT_NE(cmp.find("no_replay,1,mu_p0,"), std::string::npos);
}

TEST_F(Cli, EnvironmentOutputRootWins) {
  TempDir dir;
  const fs::path cfg = write_tiny_config(dir);
  setenv("DFKD_OUTPUT_ROOT", (dir / "env").c_str(), 1);
  const auto r = run({"pretrain-teacher", "--config", cfg.string()});
  unsetenv("DFKD_OUTPUT_ROOT");
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_FALSE(fs::exists(dir / "runs"));
  const auto dirs = run_dirs(dir / "env");
  ASSERT_EQ(dirs.size(), 1u);
  EXPECT_TRUE(fs::exists(dirs[0] / "teacher.ckpt"));
  EXPECT_TRUE(fs::exists(dirs[0] / "teacher_report.json"));
}

TEST_F(Cli, BadTeacherCheckpoint) {
  TempDir dir;
  const fs::path cfg = write_tiny_config(dir);
  std::ofstream(dir / "junk.ckpt") << "junk";
  EXPECT_EQ(run({"distill", "--config", cfg.string(), "--teacher", (dir / "junk.ckpt").string()}).code,
            cli::kDataError);
}

TEST_F(Cli, AnalyzeRejectsBadLogs) {
  TempDir dir;
  std::ofstream(dir / "empty.jsonl") << "\n";
  std::ofstream(dir / "broken.jsonl") << R"({"epoch": 1, "acc": 50})" << "\n{oops\n";
  std::ofstream(dir / "gap.jsonl") << R"({"epoch": 1, "acc": 50})" << "\n" << R"({"epoch": 3, "acc": 50})" << "\n";
  EXPECT_EQ(run({"analyze", (dir / "empty.jsonl").string()}).code, cli::kDataError);
  const auto broken = run({"analyze", (dir / "broken.jsonl").string()});
  EXPECT_EQ(broken.code, cli::kDataError);
  EXPECT_NE(broken.err.find("broken.jsonl:2"), std::string::npos);
  EXPECT_EQ(run({"analyze", (dir / "gap.jsonl").string()}).code, cli::kDataError);
  EXPECT_EQ(run({"analyze", (dir / "missing.jsonl").string()}).code, cli::kDataError);
  EXPECT_EQ(run({"analyze", (dir / "gap.jsonl").string(), "--percentiles", "100"}).code, cli::kConfigError);
}

TEST_F(Cli, MakeDataThenCsvDataset) {
  TempDir dir;
  ASSERT_EQ(run({"make-data", "--out", (dir / "d").string(), "--classes", "4", "--per-class", "20"}).code, cli::kOk);
  EXPECT_TRUE(fs::exists(dir / "d" / "train.csv"));
  EXPECT_TRUE(fs::exists(dir / "d" / "test.csv"));
  nlohmann::json j = {{"dataset", {{"kind", "csv"}, {"classes", 4}, {"path", (dir / "d").string()}}},
                      {"teacher", {{"output_dim", 4}}},
                      {"student", {{"output_dim", 4}}},
                      {"teacher_train", {{"epochs", 3}}},
                      {"output_dir", (dir / "runs").string()}};
  std::ofstream(dir / "csv.json") << j.dump();
  const auto r = run({"pretrain-teacher", "--config", (dir / "csv.json").string()});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
}

TEST_F(Cli, VerifyPassesAndZeroScaleFails) {
  const auto ok = run({"verify", "--suite", "hvp"});
  EXPECT_EQ(ok.code, cli::kOk) << ok.out;
  EXPECT_NE(ok.out.find("checks passed"), std::string::npos);
  EXPECT_EQ(run({"verify", "--suite", "losses", "--tolerance-scale", "0"}).code, cli::kFailure);
}
