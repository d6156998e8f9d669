#pragma once

// Minibatch training: forward corruption, soft-label reconstruction loss,
// importance-sampled timesteps, Adam and early stopping on validation
// Recall@K.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ldmrec/cnet.hpp"
#include "ldmrec/data.hpp"
#include "ldmrec/diffusion.hpp"
#include "json.hpp"

namespace ldmrec {

struct SoftLabelConfig {
  double p = 0.01;
  double gamma = 0.01;

  void validate() const;
  bool operator==(const SoftLabelConfig&) const = default;
};

// Positives sampled with probability p become 1 - gamma, negatives sampled
// with probability p become gamma; everything else keeps its hard label.
void soft_targets(std::span<const double> x_in, const SoftLabelConfig& cfg, Rng& rng, std::span<double> out);
std::vector<double> soft_targets(std::span<const double> x_in, const SoftLabelConfig& cfg, Rng& rng);

// Last `depth` reconstruction losses per step. Sampling is uniform until every
// step has a full buffer, then n_t is proportional to sqrt(buffer mean).
class LossHistory {
 public:
  explicit LossHistory(std::size_t steps, std::size_t depth = 10);

  void record(std::size_t t, double loss);
  bool warm() const { return full_steps_ == steps_; }
  std::size_t steps() const { return steps_; }
  std::size_t depth() const { return depth_; }
  std::size_t count(std::size_t t) const;
  double mean(std::size_t t) const;

  // n_t for t = 1..T (index t - 1); sums to 1.
  const std::vector<double>& probabilities() const;
  double probability(std::size_t t) const { return probabilities()[t - 1]; }
  // Running sums of probabilities(); the last entry is 1.
  const std::vector<double>& cumulative() const;

 private:
  void refresh() const;

  std::size_t steps_;
  std::size_t depth_;
  std::vector<double> buffer_;  // steps x depth
  std::vector<std::size_t> count_;
  std::vector<std::size_t> next_;
  std::size_t full_steps_ = 0;
  mutable bool dirty_ = true;
  mutable std::vector<double> prob_;
  mutable std::vector<double> cdf_;
};

struct TimestepDraw {
  std::size_t t;
  double n_t;
};

TimestepDraw sample_timestep(const LossHistory& hist, Rng& rng);

struct BatchLoss {
  double loss = 0.0;              // mean of L_rec / (T n_t)
  std::vector<double> row_loss;   // unweighted L_rec per row
  Gradients grads;
};

// One minibatch: x_t = q_sample(train row, t), prediction, soft targets and the
// importance-weighted MSE. Corruption draws come from `noise_rng` and label
// draws from `label_rng`, so runs that differ only in soft-label settings see
// the same corruption. Non-finite values abort with NumericError naming the
// users and steps involved.
BatchLoss batch_loss(const CNet& net, const InteractionMatrix& train, const ConditionSignals& cond,
                     const NoiseSchedule& schedule, const SoftLabelConfig& soft,
                     std::span<const std::size_t> users, std::span<const std::size_t> steps,
                     std::span<const double> n_t, Rng& noise_rng, Rng& label_rng, bool with_gradients = true);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  explicit AdamState(const ParamSet& params) : m(params), v(params) {}
  Gradients m;
  Gradients v;
  std::size_t step = 0;
};

void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  std::size_t batch_size = 400;
  AdamConfig adam;
  std::size_t max_epochs = 1000;
  std::size_t patience = 20;
  std::size_t eval_k = 20;
  std::size_t history_depth = 10;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
};

// Improvement means strictly greater than the best so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  // Returns true when `metric` is a new best.
  bool update(std::size_t epoch, double metric);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t stale() const { return stale_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = -1.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double wall_seconds = 0.0;
  double mean_loss = 0.0;
  double val_recall = 0.0;
  double val_ndcg = 0.0;
  std::size_t stale = 0;
  bool warm = false;
  std::vector<std::pair<std::size_t, double>> n_t;  // snapshot at 11 evenly spaced steps
};

nlohmann::json to_json_record(const EpochRecord& r, bool with_time = true);

struct TrainOutputs {
  std::optional<std::filesystem::path> log_path;        // JSON lines
  std::optional<std::filesystem::path> checkpoint_dir;  // best.ckpt, last.ckpt
};

struct TrainResult {
  CNet best;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  std::vector<EpochRecord> log;
};

// `cond` must be built from split.train. Validation uses forward-free
// inference on the train rows against split.validation.
TrainResult train(const DatasetSplit& split, const ConditionSignals& cond, CNet net, const NoiseSchedule& schedule,
                  const SoftLabelConfig& soft, const TrainConfig& cfg, const TrainOutputs& outputs = {});

}  // namespace ldmrec
