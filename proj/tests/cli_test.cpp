// End-to-end runs of the txlm binary on a tiny configuration.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

const nlohmann::json kTinyConfig = {
    {"seed", 5},
    {"generator", {{"n_accounts", 240}}},
    {"vocab", {{"size", 500}}},
    {"model", {{"max_context", 32}, {"d_model", 16}, {"n_heads", 2}, {"n_layers", 2}, {"d_ff", 32}}},
    {"pretrain", {{"steps", 12}, {"batch_size", 8}, {"cadence", 6}}},
    {"distill", {{"steps", 8}, {"batch_size", 8}, {"cadence", 4}, {"n_layers", 1}}},
    {"coles", {{"hidden", 8}, {"steps", 6}, {"batch_accounts", 8}}},
    {"probe", {{"tasks", {"gender", "nsf", "age"}}, {"curve_accounts", 120}}},
};

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string err;
};

Run txlm(const fs::path& dir, const std::string& args) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(TXLM_BINARY) + " --config " + (dir / "config.json").string() + " --work-dir " +
                          (dir / "work").string() + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read(err)};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(CLI_TEST_DIR) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << kTinyConfig.dump(2);
  return dir;
}

TEST(Cli, FullPipelineWritesEveryArtifact) {
  const auto dir = fresh_dir("all");
  const auto r = txlm(dir, "all");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path w = dir / "work";
  for (const char* leaf : {"corpus.jsonl", "labels.jsonl", "vocab.txt", "checkpoints/bert.ckpt",
                           "checkpoints/distilbert.ckpt", "checkpoints/coles.ckpt", "embeddings/bert.csv",
                           "embeddings/distilbert.csv", "embeddings/coles.csv", "embeddings/feateng.csv",
                           "reports/scores.csv", "reports/summary.json", "reports/tables.md",
                           "reports/rank_histogram.csv", "reports/rank_histogram.svg", "reports/learning_curve.svg"}) {
    EXPECT_TRUE(fs::exists(w / leaf)) << leaf;
  }
  const std::string scores = read(w / "reports/scores.csv");
  EXPECT_TRUE(scores.starts_with("# config_hash="));

  // Probing again from the same embeddings reproduces the table byte for byte.
  ASSERT_EQ(txlm(dir, "probe").code, 0);
  EXPECT_EQ(read(w / "reports/scores.csv"), scores);
}

TEST(Cli, DistillWithoutTeacherIsAPrerequisiteError) {
  const auto dir = fresh_dir("no_teacher");
  ASSERT_EQ(txlm(dir, "generate").code, 0);
  ASSERT_EQ(txlm(dir, "train-vocab").code, 0);
  const auto r = txlm(dir, "distill");
  EXPECT_EQ(r.code, 3);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error").at("kind"), "prerequisite");
}

TEST(Cli, UnknownConfigKeyIsAUsageError) {
  const auto dir = fresh_dir("bad_config");
  std::ofstream(dir / "config.json") << R"({"sede": 1})";
  const auto r = txlm(dir, "generate");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error").at("kind"), "config");
}

TEST(Cli, GenerateIsDeterministic) {
  const auto a = fresh_dir("gen_a");
  const auto b = fresh_dir("gen_b");
  ASSERT_EQ(txlm(a, "generate").code, 0);
  ASSERT_EQ(txlm(b, "--threads 2 generate").code, 0);
  EXPECT_EQ(read(a / "work/corpus.jsonl"), read(b / "work/corpus.jsonl"));
  EXPECT_EQ(read(a / "work/labels.jsonl"), read(b / "work/labels.jsonl"));
}

}  // namespace
