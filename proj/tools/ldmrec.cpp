// ldmrec command-line tool: prepare, train, eval, experiment.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ldmrec/cli.hpp"
#include "ldmrec/errors.hpp"

namespace {

enum Exit { ok = 0, other = 1, config = 2, data = 3, numeric = 4 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::optional<std::string> ablation;
  std::optional<std::string> ks;
  std::optional<std::string> checkpoint;
  std::optional<std::string> kind;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "flat JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--ablation", f.ablation, "model variant")
      ->check(CLI::IsMember({"none", "wo_cg", "wo_pg", "wo_sr"}));
  cmd->add_option("--k", f.ks, "comma-separated cutoffs, e.g. 10,20");
}

ldmrec::RunConfig resolve(const Flags& f, const std::string& command) {
  ldmrec::RunConfig cfg = f.config.empty() ? ldmrec::RunConfig{} : ldmrec::load_run_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    if (command == "experiment") cfg.experiment.seeds = {*f.seed};
  }
  if (f.workers) cfg.workers = *f.workers;
  if (f.out) cfg.out = *f.out;
  if (f.ablation) cfg.ablation = *f.ablation;
  if (f.ks) cfg.eval.ks = ldmrec::parse_k_list(*f.ks);
  if (f.checkpoint) {
    if (command == "experiment") cfg.experiment.checkpoint = *f.checkpoint;
    else cfg.eval.checkpoint = *f.checkpoint;
  }
  if (f.kind) cfg.experiment.kind = ldmrec::parse_experiment_kind(*f.kind);
  return cfg;
}

bool setup_logging() {
  auto logger = spdlog::stderr_color_mt("ldmrec");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("LDMREC_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else {
    spdlog::error("LDMREC_LOG must be error, info or debug (got '{}')", level);
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (!setup_logging()) return Exit::config;

  CLI::App app{"Diffusion recommender with forward-free inference"};
  app.set_version_flag("--version", ldmrec::tool_version());
  app.require_subcommand(1);

  Flags flags;
  auto* prepare = app.add_subcommand("prepare", "materialize a split dataset with features");
  auto* train = app.add_subcommand("train", "train a model; writes best.ckpt, last.ckpt and a JSONL log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* experiment = app.add_subcommand("experiment", "multi-seed experiment; writes curve.csv and summary.json");
  for (auto* cmd : {prepare, train, eval, experiment}) add_common(cmd, flags);
  eval->add_option("--checkpoint", flags.checkpoint, "checkpoint to evaluate");
  experiment->add_option("--checkpoint", flags.checkpoint, "reuse a trained model (forward_sweep, efficiency)");
  experiment->add_option("--kind", flags.kind, "forward_sweep, noise_robustness, ablation or efficiency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::config;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = resolve(flags, command);
    if (command == "prepare") ldmrec::cmd_prepare(cfg);
    else if (command == "train") ldmrec::cmd_train(cfg);
    else if (command == "eval") ldmrec::cmd_eval(cfg);
    else ldmrec::cmd_experiment(cfg);
  } catch (const ldmrec::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return Exit::config;
  } catch (const ldmrec::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return Exit::data;
  } catch (const ldmrec::NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return Exit::numeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return Exit::other;
  }
  return Exit::ok;
}
