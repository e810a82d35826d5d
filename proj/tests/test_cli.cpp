#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"
#include "tmmoe/cli.hpp"
#include "tmmoe/synthetic.hpp"

namespace tmmoe {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kSmallModel = {
    "--set", "tcn_filters=8", "--set", "num_experts=3", "--set", "expert_hidden=8",
    "--set", "gate_hidden=4", "--set", "tower_hidden=8"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli");
    ASSERT_EQ(run({"synth", "--seed", "5", "--counts", "3,3,3", "--out", (dir_ / "corpus").string()}).code, 0);
    save_windows(dir_ / "conflict.bin", conflict_corpus(20, 8, 4, 3));
  }
  static fs::path csv() { return dir_ / "corpus" / "trajectories.csv"; }
  static fs::path lanes() { return dir_ / "corpus" / "lanes.txt"; }
  static fs::path truth() { return dir_ / "corpus" / "truth.csv"; }
  static fs::path conflict() { return dir_ / "conflict.bin"; }
  static fs::path path(const std::string& name) { return dir_ / name; }

  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, SynthThroughPrepRecoversRequestedCounts) {
  const Outcome r = run({"prep", "--csv", csv().string(), "--lanes", lanes().string(), "--window", "3",
                     "--targets", truth().string(), "--out", path("prep3.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["vehicles"]["LK"], 3);
  EXPECT_EQ(j["vehicles"]["LCL"], 3);
  EXPECT_EQ(j["vehicles"]["LCR"], 3);
  EXPECT_EQ(j["steps"], 30);
  EXPECT_TRUE(fs::exists(path("prep3.bin")));
  EXPECT_EQ(nlohmann::json::parse(slurp(path("prep3.bin.json"))), j);
  const WindowSet set = load_windows(path("prep3.bin"));
  EXPECT_EQ(set.size(), j["windows"].get<std::size_t>());
}

TEST_F(Cli, WindowSixGivesSixtySteps) {
  const Outcome r = run({"prep", "--csv", csv().string(), "--lanes", lanes().string(), "--window", "6",
                     "--out", path("prep6.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_windows(path("prep6.bin")).steps, 60u);
}

TEST_F(Cli, BalanceSetting) {
  const Outcome r = run({"prep", "--csv", csv().string(), "--lanes", lanes().string(), "--window", "3",
                     "--set", "balance=4,3,2", "--out", path("bal.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_windows(path("bal.bin")).label_counts(), (std::array<std::size_t, 3>{4, 3, 2}));
}

TEST_F(Cli, EmptyCsvLeavesNoArchive) {
  std::ofstream(path("empty.csv")).flush();
  const Outcome r = run({"prep", "--csv", path("empty.csv").string(), "--lanes", lanes().string(),
                     "--out", path("empty.bin").string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("empty"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("empty.bin")));
  EXPECT_FALSE(fs::exists(path("empty.bin.partial")));
}

TEST_F(Cli, MalformedRowsAreReportedThenAbort) {
  std::ifstream in(csv());
  std::ofstream few(path("few_bad.csv")), many(path("many_bad.csv"));
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    few << ((i == 5 || i == 9) ? "1,2,oops" : line) << '\n';
    many << ((i % 5 == 3) ? "1,2,oops" : line) << '\n';
    ++i;
  }
  few.close();
  many.close();
  const Outcome ok = run({"prep", "--csv", path("few_bad.csv").string(), "--lanes", lanes().string(),
                      "--window", "3", "--out", path("few.bin").string()});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.err.find("2 of"), std::string::npos) << ok.err;
  const Outcome bad = run({"prep", "--csv", path("many_bad.csv").string(), "--lanes",
                       lanes().string(), "--window", "3", "--out", path("many.bin").string()});
  EXPECT_EQ(bad.code, cli::kData);
  EXPECT_FALSE(fs::exists(path("many.bin")));
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"prep", "--csv", csv().string()}).code, cli::kUsage);
  EXPECT_EQ(run({"prep", "--csv", csv().string(), "--lanes", lanes().string(), "--window", "4",
                 "--out", path("w4.bin").string()})
                .code,
            cli::kUsage);
  const Outcome unknown = run({"train", "--data", conflict().string(), "--out", path("u").string(),
                           "--set", "bogus=1"});
  EXPECT_EQ(unknown.code, cli::kUsage);
  EXPECT_NE(unknown.err.find("bogus"), std::string::npos);
  std::ofstream(path("bad.cfg")) << "epochs = 2\nlearning_rat = 0.1\n";
  EXPECT_EQ(run({"train", "--data", conflict().string(), "--out", path("u").string(), "--config",
                 path("bad.cfg").string()})
                .code,
            cli::kUsage);
  EXPECT_EQ(run({"ablate", "--data", conflict().string(), "--drop", "speed"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, TrainIsDeterministicAndFlagsWin) {
  std::ofstream(path("train.cfg")) << "epochs = 7\nbatch_size = 16\nseed = 4\n";
  const auto args = [&](const std::string& out) {
    return with({"train", "--data", conflict().string(), "--config", path("train.cfg").string(),
                 "--epochs", "3", "--out", path(out).string()},
                kSmallModel);
  };
  const Outcome a = run(args("ta")), b = run(args("tb"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out.substr(0, a.out.find("best")), b.out.substr(0, b.out.find("best")));
  const std::string history = slurp(path("ta") / "history.csv");
  EXPECT_EQ(history, slurp(path("tb") / "history.csv"));
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 4);  // header + 3 epochs
  EXPECT_NE(a.out.find("epoch 3 joint"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("ta") / "model.tmmoe"));
}

TEST_F(Cli, OverfitSmoke) {
  const auto c = conflict_corpus(3, 8, 4, 9);
  WindowSet eight = c;
  eight.windows.resize(8);
  save_windows(path("eight.bin"), eight);
  const Outcome r = run(with({"train", "--data", path("eight.bin").string(), "--out",
                          path("overfit").string(), "--epochs", "500", "--set", "test_fraction=0"},
                         kSmallModel));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string last = r.out.substr(r.out.rfind("epoch 500"));
  std::istringstream ss(last);
  std::string word;
  double joint = 0.0;
  ss >> word >> word >> word >> joint;
  EXPECT_LT(joint, 0.05) << last;
}

TEST_F(Cli, MissingArchiveAndTrainingFailureDiffer) {
  const Outcome missing = run({"train", "--data", path("nope.bin").string(), "--out", path("m").string()});
  EXPECT_EQ(missing.code, cli::kData);
  const Outcome diverged = run(with({"train", "--data", conflict().string(), "--out",
                                 path("diverged").string(), "--epochs", "5", "--set",
                                 "learning_rate=1e300", "--set", "clip_norm=1e300"},
                                kSmallModel));
  EXPECT_EQ(diverged.code, cli::kNumeric) << diverged.err;
  EXPECT_NE(missing.code, diverged.code);
  EXPECT_FALSE(fs::exists(path("diverged")));
  EXPECT_FALSE(fs::exists(path("diverged.partial")));
}

TEST_F(Cli, EvalReportAndSplits) {
  const Outcome t = run(with({"train", "--data", conflict().string(), "--out", path("ek").string(),
                          "--epochs", "40", "--set", "batch_size=16"},
                         kSmallModel));
  ASSERT_EQ(t.code, 0) << t.err;
  const auto eval = [&](const std::string& split) {
    return run({"eval", "--ckpt", path("ek").string(), "--data", conflict().string(), "--split", split});
  };
  const Outcome all = eval("all"), again = eval("all"), train = eval("train"), test = eval("test");
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_EQ(all.out, again.out);
  const auto j = nlohmann::json::parse(all.out);
  for (const char* k : {"LK", "LCL", "LCR"}) EXPECT_TRUE(j["auc"].contains(k)) << k;
  EXPECT_EQ(j["samples"], 60);
  EXPECT_EQ(nlohmann::json::parse(test.out)["samples"], 12);
  EXPECT_GE(nlohmann::json::parse(train.out)["accuracy"].get<double>(),
            nlohmann::json::parse(test.out)["accuracy"].get<double>());

  const Outcome written = run({"eval", "--ckpt", path("ek").string(), "--data", conflict().string(),
                           "--out", path("eval_out").string()});
  ASSERT_EQ(written.code, 0);
  EXPECT_EQ(slurp(path("eval_out") / "metrics.json"), all.out);
  EXPECT_EQ(slurp(path("eval_out") / "roc.csv").substr(0, 15), "class,fpr,tpr\nL");
}

TEST_F(Cli, EvalHashMismatchNamesBothHashes) {
  const Outcome t = run(with({"train", "--data", conflict().string(), "--out", path("hk").string(),
                          "--epochs", "1"},
                         kSmallModel));
  ASSERT_EQ(t.code, 0) << t.err;
  const WindowSet other = conflict_corpus(5, 10, 4, 3);
  save_windows(path("other.bin"), other);
  const Outcome r = run({"eval", "--ckpt", path("hk").string(), "--data", path("other.bin").string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find(hash_hex(other.config_hash())), std::string::npos) << r.err;
  EXPECT_NE(r.err.find(hash_hex(load_windows(conflict()).config_hash())), std::string::npos) << r.err;
  EXPECT_EQ(run({"eval", "--ckpt", path("none").string(), "--data", conflict().string()}).code,
            cli::kData);
}

TEST_F(Cli, AblateReportsBothRuns) {
  const Outcome r = run(with({"ablate", "--data", conflict().string(), "--drop", "conflict_indicator",
                          "--set", "epochs=2", "--out", path("ablate.json").string()},
                         kSmallModel));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["drop"][0], "conflict_indicator");
  EXPECT_TRUE(j["full"].contains("accuracy"));
  EXPECT_TRUE(j["dropped"].contains("accuracy"));
  EXPECT_EQ(nlohmann::json::parse(slurp(path("ablate.json"))), j);
}

TEST_F(Cli, GradcheckListsEveryOpAndCatchesFaults) {
  Outcome ok = run({"gradcheck"});
  ASSERT_EQ(ok.code, 0) << ok.out;
  ok.out.insert(0, "\n");
  for (const char* op : {"matmul", "causal_conv1d", "batch_norm", "lstm_gates", "mix_experts",
                         "log_softmax", "model"}) {
    EXPECT_NE(ok.out.find(std::string("\n") + op + " "), std::string::npos) << op;
  }
  debug::set_gradient_fault("relu");
  const Outcome bad = run({"gradcheck"});
  debug::clear_gradient_fault();
  EXPECT_EQ(bad.code, cli::kNumeric);
  const auto line = bad.out.substr(bad.out.find("\nrelu "), 40);
  EXPECT_NE(line.find("FAIL"), std::string::npos) << bad.out;
}

}  // namespace
}  // namespace tmmoe
