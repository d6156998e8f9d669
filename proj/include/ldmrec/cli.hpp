#pragma once

// Configuration and subcommands behind the ldmrec command-line tool.
//
// A run config is a flat JSON object with dotted keys ("model.d",
// "train.batch_size", ...). Values are resolved as command-line flag, then
// config file, then built-in default. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ldmrec/experiment.hpp"
#include "json.hpp"

namespace ldmrec {

std::string tool_version();

struct DataConfig {
  std::string dir;                   // prepared dataset; empty = synthesize in memory
  std::string source = "synthetic";  // prepare: "synthetic" or "files"
  std::string interactions;          // raw "user<TAB>item" file
  std::string visual;                // feature rows aligned with the raw item index order
  std::string textual;
  std::size_t k_core = 10;
  SplitRatios ratios;
};

struct EvalConfig {
  std::vector<std::size_t> ks{10, 20};
  std::string checkpoint;
  std::size_t batch = 256;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "out";
  DataConfig data;
  SyntheticSpec synthetic;  // seed is taken from the run seed
  CNetConfig model;         // users, items and feature dims come from the data
  TrainConfig train;
  DiffusionConfig diffusion;
  SoftLabelConfig soft;
  ConditioningOptions conditioning;  // svd.rank follows model.d_svd, svd.seed the run seed
  std::string ablation = "none";
  EvalConfig eval;
  ExperimentConfig experiment;

  RunConfig();
  void validate() const;

  // Model spec with the ablation applied and the run seed in place.
  ModelSpec model_spec() const;
};

// Every recognised dotted key, in serialization order.
std::vector<std::string> run_config_keys();

// Overlays a flat JSON object. Throws ConfigError on unknown keys or values
// of the wrong type.
void apply_json(RunConfig& cfg, const nlohmann::json& flat);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// Parses "10,20".
std::vector<std::size_t> parse_k_list(const std::string& text);

// resolved_config.json plus manifest.json {tool, version, command}. An
// existing manifest.json is extended rather than replaced.
void write_run_metadata(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command);

// Builds the dataset described by cfg.data / cfg.synthetic: synthetic data
// from `seed`, or raw files filtered to the k-core with features aligned to
// the surviving items.
Dataset build_dataset(const RunConfig& cfg, std::uint64_t seed);

// Split TSVs, manifest.json, visual.csv and textual.csv.
void save_dataset(const std::filesystem::path& dir, const Dataset& data, std::uint64_t seed, const SplitRatios& ratios);
Dataset load_dataset(const std::filesystem::path& dir);

// cfg.data.dir when set, otherwise build_dataset(cfg, seed).
Dataset resolve_dataset(const RunConfig& cfg, std::uint64_t seed);

void cmd_prepare(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_experiment(const RunConfig& cfg);

}  // namespace ldmrec
