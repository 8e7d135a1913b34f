#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

/// Runs the CLI with `args`, capturing stdout and stderr together.
Result cli(const std::string& args) {
  const std::string cmd = std::string(REFORMAT_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Dataset, features and splits shared by the tests in this file.
class Chain : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testutil::temp_dir("cli");
    const std::string r = root_.string();
    ASSERT_EQ(cli("gen --out " + r + "/data --families 17 --seed 4").code, 0);
    ASSERT_EQ(cli("featurize --data " + r + "/data --out " + r + "/feat").code, 0);
    ASSERT_EQ(cli("split --features " + r + "/feat --out " + r + "/splits.json --scheme family --folds 3 --seed 1").code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string path(const std::string& rel) { return (root_ / rel).string(); }

  static fs::path root_;
};

fs::path Chain::root_;

}  // namespace

TEST_F(Chain, GeneratedSetHasAboutFiveHundredSignatures) {
  const auto stats = slurp(path("data/stats.json"));
  ASSERT_FALSE(stats.empty());
  const auto pos = stats.find("\"n\":");
  ASSERT_NE(pos, std::string::npos);
  const long n = std::stol(stats.substr(pos + 4));
  EXPECT_GE(n, 400);
  EXPECT_LE(n, 650);
  EXPECT_TRUE(fs::exists(path("data/run_manifest.json")));
  EXPECT_TRUE(fs::exists(path("feat/run_manifest.json")));
}

TEST_F(Chain, TrainEvalReportCompletes) {
  const auto train = cli("train --features " + path("feat") + " --splits " + path("splits.json") + " --out " +
                         path("m_seq") + " --model logistic --mask seq --C 1");
  ASSERT_EQ(train.code, 0) << train.output;
  const auto eval = cli("eval --features " + path("feat") + " --models " + path("m_seq") + " --out " +
                        path("eval.json"));
  ASSERT_EQ(eval.code, 0) << eval.output;
  EXPECT_NE(eval.output.find("auroc"), std::string::npos);
  const auto again = cli("eval --features " + path("feat") + " --models " + path("m_seq") + " --out " +
                         path("eval2.json"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(path("eval.json")), slurp(path("eval2.json")));
  const auto rep = cli("report " + path("eval.json") + " " + path("eval2.json") + " --format tsv");
  EXPECT_EQ(rep.code, 0) << rep.output;
}

TEST_F(Chain, ReportRefusesMixedHashesWithoutForce) {
  const std::string r = root_.string();
  // A second dataset gives features with a different hash.
  ASSERT_EQ(cli("gen --out " + r + "/data2 --families 4 --seed 8").code, 0);
  ASSERT_EQ(cli("featurize --data " + r + "/data2 --out " + r + "/feat2").code, 0);
  ASSERT_EQ(cli("split --features " + r + "/feat2 --out " + r + "/splits2.json --folds 2").code, 0);
  for (const std::string k : {"", "2"})
    ASSERT_EQ(cli("train --features " + r + "/feat" + k + " --splits " + r + "/splits" + k + ".json --out " + r +
                  "/m_rmsd" + k + " --model logistic --mask rmsd")
                  .code,
              0);
  ASSERT_EQ(cli("eval --features " + r + "/feat --models " + r + "/m_rmsd --out " + r + "/a.json").code, 0);
  const auto b = cli("eval --features " + r + "/feat2 --models " + r + "/m_rmsd2 --out " + r + "/b.json");
  ASSERT_EQ(b.code, 0) << b.output;
  const auto refused = cli("report " + r + "/a.json " + r + "/b.json");
  EXPECT_EQ(refused.code, 2);
  EXPECT_NE(refused.output.find("--force"), std::string::npos);
  const auto forced = cli("report " + r + "/a.json " + r + "/b.json --force");
  EXPECT_EQ(forced.code, 0);
  EXPECT_NE(forced.output.find("warning"), std::string::npos);
}

TEST_F(Chain, MissingModelNamesTheArtifact) {
  const auto r = cli("eval --features " + path("feat") + " --models " + path("no_such_model"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("no_such_model"), std::string::npos);
  const auto s = cli("split --features " + path("no_feat") + " --out " + path("x.json"));
  EXPECT_EQ(s.code, 3);
}

TEST_F(Chain, ConfigErrorsExitTwo) {
  EXPECT_EQ(cli("train --features " + path("feat") + " --splits " + path("splits.json") + " --out " + path("bad") +
                " --mask seq,colour")
                .code,
            2);
  EXPECT_EQ(cli("train --features " + path("feat") + " --splits " + path("splits.json") + " --out " + path("bad") +
                " --model forest")
                .code,
            2);
  EXPECT_EQ(cli("split --features " + path("feat") + " --out " + path("x.json") + " --ratios 0.5 0.5 0.5").code, 2);
  EXPECT_EQ(cli("gen").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(Chain, ConfigFileIsOverriddenByFlags) {
  const auto cfg = path("run.json");
  std::ofstream(cfg) << R"({"seed": 9, "scheme": "signature", "folds": 4})";
  ASSERT_EQ(cli("--config " + cfg + " split --features " + path("feat") + " --out " + path("s4.json")).code, 0);
  ASSERT_EQ(cli("--config " + cfg + " split --features " + path("feat") + " --out " + path("s5.json") + " --folds 5")
                .code,
            0);
  const auto a = slurp(path("s4.json")), b = slurp(path("s5.json"));
  EXPECT_NE(a.find("\"n_folds\": 4"), std::string::npos);
  EXPECT_NE(b.find("\"n_folds\": 5"), std::string::npos);
  std::ofstream(path("broken.json")) << "{ not json";
  EXPECT_EQ(cli("--config " + path("broken.json") + " gen --out " + path("g")).code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(cli("--help").code, 0); }
