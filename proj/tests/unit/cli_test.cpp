#include <gtest/gtest.h>

#include <fstream>

#include "cli_runner.hpp"
#include "masksembles/data.hpp"
#include "masksembles/experiment.hpp"
#include "masksembles/io.hpp"
#include "masksembles/masks.hpp"
#include "masksembles/metrics.hpp"

namespace masksembles {
namespace {

using testing::run_cli;
using testing::scratch_dir;
using testing::snapshot;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name()); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::filesystem::path dir_;
};

TEST_F(Cli, MasksSummaryAndFile) {
  const auto r = run_cli({"masks", "--n", "4", "--m", "2", "--s", "2", "--out", path("m")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("expected_iou 0.3333333333333333\n"), std::string::npos);
  const MaskSet masks = load_masks(path("m/masks.txt"));
  EXPECT_EQ(masks.count(), 4u);
  EXPECT_NE(r.out.find("K " + std::to_string(masks.width()) + "\n"), std::string::npos);
}

TEST_F(Cli, MasksSingleRow) {
  const auto r = run_cli({"masks", "--n", "1", "--m", "3", "--s", "1", "--out", path("m")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("m/masks.txt")), "1 3 1 0 1\n111\n");
}

TEST_F(Cli, MasksInvalidScaleExitsTwo) {
  const auto r = run_cli({"masks", "--s", "0.5", "--out", path("m")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("s must be ≥ 1"), std::string::npos);
}

TEST_F(Cli, UnknownFlagsAndMissingSubcommandExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"masks", "--bogus", "1"}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(Cli, TrainIsDeterministicPerSeed) {
  const std::vector<std::string> base{"--seed", "7", "train", "--count", "40", "--epochs", "3", "--m", "16"};
  auto a = base;
  a.insert(a.end(), {"--out", path("a")});
  auto b = base;
  b.insert(b.end(), {"--out", path("b")});
  ASSERT_EQ(run_cli(a).code, 0);
  ASSERT_EQ(run_cli(b).code, 0);
  EXPECT_EQ(snapshot(path("a")), snapshot(path("b")));
  EXPECT_EQ(snapshot(path("a")).size(), 5u);

  auto c = base;
  c[1] = "8";
  c.insert(c.end(), {"--out", path("c")});
  ASSERT_EQ(run_cli(c).code, 0);
  EXPECT_NE(read_file(path("a/model.ckpt")), read_file(path("c/model.ckpt")));
}

TEST_F(Cli, ZeroLearningRateKeepsInitialWeights) {
  for (const char* epochs : {"1", "4"}) {
    const auto r = run_cli({"train", "--lr", "0", "--count", "20", "--epochs", epochs, "--m", "8", "--out",
                            path(std::string("e") + epochs)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(read_file(path("e1/model.ckpt")), read_file(path("e4/model.ckpt")));
}

TEST_F(Cli, DivergenceExitsThree) {
  const auto r = run_cli({"train", "--lr", "1e300", "--count", "10", "--epochs", "3", "--out", path("t")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
}

TEST_F(Cli, BlobTrainingThenEvaluation) {
  ASSERT_EQ(run_cli({"train", "--dataset", "blobs", "--separation", "6", "--count", "100", "--test-count", "200",
                     "--epochs", "30", "--out", path("t")})
                .code,
            0);
  const std::vector<std::string> eval{"eval", "--checkpoint", path("t/model.ckpt"), "--data", path("t/test.csv"),
                                      "--ood", path("t/ood.csv")};
  auto first = eval;
  first.insert(first.end(), {"--out", path("e1")});
  auto second = eval;
  second.insert(second.end(), {"--out", path("e2")});
  const auto r1 = run_cli(first);
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(run_cli(second).code, 0);
  EXPECT_EQ(snapshot(path("e1")), snapshot(path("e2")));

  const std::string text = read_file(path("e1/metrics.csv"));
  const MetricsReport report = parse_metrics_csv_row(split(text, '\n')[1]);
  EXPECT_GE(report.accuracy, 0.99);
  EXPECT_EQ(report.tag, "eval/entropy");
  EXPECT_EQ(report.wall_time_seconds, 0.0);

  // ROC AUC column equals a recomputation from the dumped scores.
  std::vector<double> scores;
  std::vector<std::uint8_t> flags;
  const auto lines = split(read_file(path("e1/scores.csv")), '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], ',');
    scores.push_back(parse_double(f[0]));
    flags.push_back(f[1] == "1" ? 1 : 0);
  }
  EXPECT_EQ(roc_auc(scores, flags), report.ood_roc_auc);
  EXPECT_EQ(pr_auc(scores, flags), report.ood_pr_auc);

  auto maxprob = eval;
  maxprob.insert(maxprob.end(), {"--score", "maxprob", "--out", path("e3")});
  ASSERT_EQ(run_cli(maxprob).code, 0);
  EXPECT_EQ(parse_metrics_csv_row(split(read_file(path("e3/metrics.csv")), '\n')[1]).tag, "eval/maxprob");
}

TEST_F(Cli, SingleMaskModelEvaluatesIdentically) {
  ASSERT_EQ(run_cli({"train", "--n", "1", "--s", "1", "--count", "30", "--epochs", "2", "--m", "8", "--out",
                     path("t")})
                .code,
            0);
  const std::vector<std::string> eval{"eval", "--checkpoint", path("t/model.ckpt"), "--data", path("t/test.csv"),
                                      "--ood", path("t/ood.csv"), "--out", path("e")};
  const auto r1 = run_cli(eval);
  const auto r2 = run_cli(eval);
  ASSERT_EQ(r1.code, 0) << r1.err;
  EXPECT_EQ(r1.out, r2.out);
}

TEST_F(Cli, EvalMissingFilesExitTwo) {
  const auto r = run_cli({"eval", "--checkpoint", path("none.ckpt"), "--data", path("d.csv"), "--ood",
                          path("o.csv"), "--out", path("e")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run_cli({"eval", "--out", path("e")}).code, 2);
}

TEST_F(Cli, ConfigFileWithCommandLineOverride) {
  {
    std::ofstream cfg(path("surface.cfg"));
    cfg << "# grid\nn = 1,4\ns=1,2,3\ndraws=20\nseed=5\n";
  }
  auto r = run_cli({"sweep-surface", "--config", path("surface.cfg"), "--out", path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = parse_surface_csv(read_file(path("a/surface.csv")));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].relative_size, 1.0);

  r = run_cli({"sweep-surface", "--config", path("surface.cfg"), "--s", "4", "--out", path("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  rows = parse_surface_csv(read_file(path("b/surface.csv")));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].s, 4.0);

  {
    std::ofstream bad(path("bad.cfg"));
    bad << "no equals sign\n";
  }
  EXPECT_EQ(run_cli({"sweep-surface", "--config", path("bad.cfg")}).code, 2);
  EXPECT_EQ(run_cli({"sweep-surface", "--config", path("missing.cfg")}).code, 2);
}

TEST_F(Cli, TransitionSweepWritesSummaryAndGrids) {
  const auto r = run_cli({"sweep-transition", "--count", "30", "--test-count", "20", "--epochs", "2", "--m", "8",
                          "--grid-x", "5", "--grid-y", "3", "--out", path("t")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto files = snapshot(path("t"));
  EXPECT_EQ(files.size(), 7u);
  EXPECT_TRUE(files.count("entropy/r0_single.csv"));
  EXPECT_TRUE(files.count("entropy/r0_10.csv"));
  const std::string summary = files.at("transition_summary.csv");
  EXPECT_NE(summary.find(",single,"), std::string::npos);
  EXPECT_NE(summary.find(",1.1,4,8,"), std::string::npos);
}

TEST_F(Cli, DiversitySweepSingleRowIsZero) {
  const auto r = run_cli({"sweep-diversity", "--count", "30", "--test-count", "30", "--nuisance-dims", "0",
                          "--epochs", "2", "--m", "8", "--repeats", "1", "--out", path("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("single,0\n"), std::string::npos);
  const auto rows = parse_diversity_csv(read_file(path("d/diversity.csv")));
  EXPECT_EQ(rows.front().config, "single");
}

}  // namespace
}  // namespace masksembles
