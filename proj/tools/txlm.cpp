// txlm: command-line driver for the synthetic-transaction pipeline.
//
//   txlm [--config run.json] [--seed N] [--threads N] [--work-dir DIR] <verb>
//
// Verbs: generate, train-vocab, pretrain, distill, train-coles, embed, probe,
// report, all. Flags override the config file. On failure the tool prints one
// JSON object {"error": {"kind": ..., "message": ...}} to stderr and exits with
// 2 (usage or config), 3 (missing prerequisite) or 1 (anything else).

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "txlm/config.hpp"
#include "txlm/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kPrerequisite = 3 };

int fail(std::string_view kind, std::string_view message, int code) {
  nlohmann::json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transaction language model pipeline on a synthetic corpus"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> work_dir;
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--threads", threads, "worker cap (overrides the config)")->check(CLI::PositiveNumber);
  app.add_option("--work-dir", work_dir, "base directory for default artifact paths");

  bool resume = false;
  std::string method;
  auto* generate = app.add_subcommand("generate", "write corpus and labels");
  auto* vocab = app.add_subcommand("train-vocab", "learn the subword vocabulary");
  auto* pretrain = app.add_subcommand("pretrain", "MLM pretraining of the teacher encoder");
  pretrain->add_flag("--resume", resume, "continue from the latest checkpoint");
  auto* distill = app.add_subcommand("distill", "distil the teacher into the student encoder");
  distill->add_flag("--resume", resume, "continue from the latest checkpoint");
  auto* coles = app.add_subcommand("train-coles", "train the contrastive sequence baseline");
  auto* embed = app.add_subcommand("embed", "write one vector per account");
  embed->add_option("--method", method, "bert, distilbert, coles or feateng (default: all configured)");
  auto* probe = app.add_subcommand("probe", "fit probes and write the score table");
  auto* report = app.add_subcommand("report", "normalized tables, rank histogram, learning curve");
  auto* all = app.add_subcommand("all", "every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        j = nlohmann::json::parse(in, nullptr, true, true);
      } catch (const nlohmann::json::exception& e) {
        throw txlm::config::ConfigError("config " + config_path + ": " + e.what());
      }
    }
    if (seed) j["seed"] = *seed;
    if (threads) j["threads"] = *threads;
    if (work_dir) j["paths"]["work_dir"] = *work_dir;
    const auto cfg = txlm::config::from_json(j);

    namespace p = txlm::pipeline;
    if (generate->parsed()) p::cmd_generate(cfg);
    if (vocab->parsed()) p::cmd_train_vocab(cfg);
    if (pretrain->parsed()) p::cmd_pretrain(cfg, resume);
    if (distill->parsed()) p::cmd_distill(cfg, resume);
    if (coles->parsed()) p::cmd_train_coles(cfg);
    if (embed->parsed()) {
      if (method.empty()) {
        for (const auto& m : cfg.methods) p::cmd_embed(cfg, m);
      } else {
        p::cmd_embed(cfg, method);
      }
    }
    if (probe->parsed()) p::cmd_probe(cfg);
    if (report->parsed()) p::cmd_report(cfg);
    if (all->parsed()) p::cmd_all(cfg);
  } catch (const txlm::config::ConfigError& e) {
    return fail("config", e.what(), kUsage);
  } catch (const txlm::pipeline::PrerequisiteError& e) {
    return fail("prerequisite", e.what(), kPrerequisite);
  } catch (const std::exception& e) {
    return fail("error", e.what(), kFailure);
  }
  return kOk;
}
