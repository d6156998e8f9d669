#pragma once

// Multi-seed experiments: forward-step sweep, noise robustness, ablations and
// inference efficiency. Each writes curve.csv (one row per x, a mean and a
// standard deviation column per metric), summary.json and runs.jsonl to the
// output directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldmrec/cnet.hpp"
#include "ldmrec/conditioning.hpp"
#include "ldmrec/data.hpp"
#include "ldmrec/diffusion.hpp"
#include "ldmrec/evaluate.hpp"
#include "ldmrec/training.hpp"
#include "json.hpp"

namespace ldmrec {

struct DiffusionConfig {
  std::size_t steps = 1000;
  double scale = 0.1;
  double alpha_min = 0.0001;
};

enum class Ablation { none, wo_cg, wo_pg, wo_sr };

Ablation parse_ablation(const std::string& name);  // "none" | "full", "wo_cg", "wo_pg", "wo_sr"
std::string ablation_name(Ablation a);             // "full", "wo_cg", ...

// Everything needed to train one model. CNetConfig dimensions that come from
// the data (users, items, feature dims) are filled in by train_and_evaluate.
struct ModelSpec {
  CNetConfig net;
  TrainConfig train;
  SoftLabelConfig soft;
  DiffusionConfig diffusion;
  ConditioningOptions conditioning;
  Ablation ablation = Ablation::none;
};

// Flags the network and soft-label config per the ablation.
ModelSpec apply_ablation(ModelSpec spec, Ablation a);

struct Dataset {
  DatasetSplit split;
  FeatureMatrix visual;
  FeatureMatrix textual;
};

struct RunOutcome {
  TrainResult train;
  ConditionSignals cond;
  EvalReport test;
};

// Builds condition signals from split.train, trains with seed `seed` (network
// init, training and SVD sketch), and evaluates forward-free on the test split.
RunOutcome train_and_evaluate(const Dataset& data, ModelSpec spec, std::uint64_t seed,
                              std::span<const std::size_t> ks, const TrainOutputs& outputs = {});

enum class ExperimentKind { forward_sweep, noise_robustness, ablation, efficiency };
ExperimentKind parse_experiment_kind(const std::string& name);
std::string experiment_kind_name(ExperimentKind k);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::forward_sweep;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::optional<std::size_t>> forward_steps{std::nullopt, 1, 5, 25, 100};  // nullopt = forward-free
  std::vector<double> noise_fractions{0.0, 0.1, 0.2, 0.3};
  std::vector<Ablation> noise_variants{Ablation::none, Ablation::wo_sr};
  std::vector<Ablation> ablations{Ablation::none, Ablation::wo_cg, Ablation::wo_pg, Ablation::wo_sr};
  std::vector<std::size_t> ks{10, 20};
  // forward_sweep and efficiency reuse this model instead of training; its
  // condition signals are rebuilt from the train split with model.train.seed.
  std::optional<std::filesystem::path> checkpoint;
};

struct CurvePoint {
  std::string x;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single seed
  std::size_t seeds = 0;
};

struct ExperimentReport {
  ExperimentKind kind;
  std::vector<CurvePoint> curve;
  nlohmann::json summary;
  std::vector<nlohmann::json> runs;  // one record per training run or evaluation pass

  // Mean for (x, metric); throws IndexError if absent.
  const CurvePoint& point(const std::string& x, const std::string& metric) const;
};

using DatasetProvider = std::function<Dataset(std::uint64_t seed)>;

ExperimentReport run_experiment(const ExperimentConfig& cfg, const DatasetProvider& data, const ModelSpec& model,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

// Shortest decimal text that round-trips, used for CSV/JSON x labels.
std::string format_number(double v);

}  // namespace ldmrec
