#include "ldmrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ldmrec/errors.hpp"
#include "ldmrec/evaluate.hpp"

namespace ldmrec {

// ------------------------------------------------------------- soft labels

void SoftLabelConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("soft labels: p must be in [0, 1]");
  if (!(gamma >= 0.0 && gamma < 0.5)) throw ConfigError("soft labels: gamma must be in [0, 0.5)");
}

void soft_targets(std::span<const double> x_in, const SoftLabelConfig& cfg, Rng& rng, std::span<double> out) {
  if (out.size() != x_in.size()) throw DimensionError("soft_targets: output size mismatch");
  if (cfg.p == 0.0) {
    std::copy(x_in.begin(), x_in.end(), out.begin());
    return;
  }
  std::bernoulli_distribution pick(cfg.p);
  for (std::size_t i = 0; i < x_in.size(); ++i) {
    const bool positive = x_in[i] != 0.0;
    const bool sampled = pick(rng);
    if (positive) {
      out[i] = sampled ? 1.0 - cfg.gamma : 1.0;
    } else {
      out[i] = sampled ? cfg.gamma : 0.0;
    }
  }
}

std::vector<double> soft_targets(std::span<const double> x_in, const SoftLabelConfig& cfg, Rng& rng) {
  std::vector<double> out(x_in.size());
  soft_targets(x_in, cfg, rng, out);
  return out;
}

// ------------------------------------------------------------ loss history

LossHistory::LossHistory(std::size_t steps, std::size_t depth)
    : steps_(steps), depth_(depth), buffer_(steps * depth), count_(steps), next_(steps) {
  if (steps == 0 || depth == 0) throw ConfigError("loss history needs positive steps and depth");
}

void LossHistory::record(std::size_t t, double loss) {
  if (t < 1 || t > steps_) throw IndexError("loss history: step out of range");
  if (!std::isfinite(loss) || loss < 0.0) throw NumericError("loss history: invalid loss value");
  const std::size_t i = t - 1;
  buffer_[i * depth_ + next_[i]] = loss;
  next_[i] = (next_[i] + 1) % depth_;
  if (count_[i] < depth_ && ++count_[i] == depth_) ++full_steps_;
  if (warm()) dirty_ = true;
}

std::size_t LossHistory::count(std::size_t t) const {
  if (t < 1 || t > steps_) throw IndexError("loss history: step out of range");
  return count_[t - 1];
}

double LossHistory::mean(std::size_t t) const {
  const std::size_t n = count(t);
  if (n == 0) return 0.0;
  const double* b = &buffer_[(t - 1) * depth_];
  return std::accumulate(b, b + n, 0.0) / static_cast<double>(n);
}

void LossHistory::refresh() const {
  if (!dirty_) return;
  prob_.assign(steps_, 1.0 / static_cast<double>(steps_));
  if (warm()) {
    double total = 0.0;
    for (std::size_t t = 1; t <= steps_; ++t) total += (prob_[t - 1] = std::sqrt(mean(t)));
    if (total > 0.0) {
      for (auto& p : prob_) p /= total;
    } else {
      prob_.assign(steps_, 1.0 / static_cast<double>(steps_));
    }
  }
  cdf_.resize(steps_);
  std::partial_sum(prob_.begin(), prob_.end(), cdf_.begin());
  cdf_.back() = 1.0;
  dirty_ = false;
}

const std::vector<double>& LossHistory::probabilities() const {
  refresh();
  return prob_;
}

const std::vector<double>& LossHistory::cumulative() const {
  refresh();
  return cdf_;
}

TimestepDraw sample_timestep(const LossHistory& hist, Rng& rng) {
  const auto& cdf = hist.cumulative();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
  if (idx >= cdf.size()) idx = cdf.size() - 1;
  return {idx + 1, hist.probabilities()[idx]};
}

// -------------------------------------------------------------- batch loss

namespace {

std::string describe_batch(std::span<const std::size_t> users, std::span<const std::size_t> steps) {
  std::ostringstream os;
  os << "rows (user, t):";
  for (std::size_t r = 0; r < users.size(); ++r) os << " (" << users[r] << ", " << steps[r] << ")";
  return os.str();
}

}  // namespace

BatchLoss batch_loss(const CNet& net, const InteractionMatrix& train, const ConditionSignals& cond,
                     const NoiseSchedule& schedule, const SoftLabelConfig& soft,
                     std::span<const std::size_t> users, std::span<const std::size_t> steps,
                     std::span<const double> n_t, Rng& noise_rng, Rng& label_rng, bool with_gradients) {
  const std::size_t B = users.size();
  if (steps.size() != B || n_t.size() != B) throw DimensionError("batch_loss: users, steps and n_t differ in length");
  if (B == 0) throw UsageError("batch_loss: empty batch");
  const std::size_t I = train.num_items();
  const double T = static_cast<double>(schedule.steps());

  DenseMatrix x_t(B, I), target(B, I);
  std::vector<double> clean(I), weights(B);
  std::vector<std::optional<std::size_t>> step_list(B);
  for (std::size_t r = 0; r < B; ++r) {
    train.dense_row_into(users[r], clean);
    soft_targets(clean, soft, label_rng, target.row(r));
    q_sample(clean, steps[r], schedule, noise_rng, x_t.row(r));
    weights[r] = 1.0 / (T * n_t[r]);
    step_list[r] = steps[r];
  }

  BatchLoss out;
  try {
    Tape tape(&net.params(), with_gradients);
    Var pred = net.forward(tape, x_t, users, step_list, cond);
    Var rows = ag::row_mse(pred, tape.constant(std::move(target)));
    Var loss = ag::weighted_mean(rows, weights);
    out.loss = loss.value()[0];
    out.row_loss.assign(rows.value().values().begin(), rows.value().values().end());
    if (with_gradients) {
      out.grads = tape.backward(loss);
      for (std::size_t i = 0; i < out.grads.size(); ++i) {
        if (!out.grads[i].all_finite()) {
          throw NumericError("non-finite gradient for " + net.params().name(i));
        }
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; " + describe_batch(users, steps));
  }
  return out;
}

// -------------------------------------------------------------------- Adam

void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    DenseMatrix& w = params.value(p);
    const DenseMatrix& g = grads[p];
    DenseMatrix& m = state.m[p];
    DenseMatrix& v = state.v[p];
    if (!g.same_shape(w) || !m.same_shape(w) || !v.same_shape(w)) throw DimensionError("adam: shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

// --------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train: adam betas must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train: adam epsilon must be positive");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
  if (eval_k == 0) throw ConfigError("train: eval_k must be positive");
  if (history_depth == 0) throw ConfigError("train: history_depth must be positive");
}

bool EarlyStopping::update(std::size_t epoch, double metric) {
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

nlohmann::json to_json_record(const EpochRecord& r, bool with_time) {
  nlohmann::json n_t = nlohmann::json::object();
  for (const auto& [t, p] : r.n_t) n_t[std::to_string(t)] = p;
  nlohmann::json j{{"epoch", r.epoch},       {"loss", r.mean_loss}, {"val_recall", r.val_recall},
                   {"val_ndcg", r.val_ndcg}, {"stale", r.stale},    {"warm", r.warm},
                   {"n_t", n_t}};
  if (with_time) j["wall_seconds"] = r.wall_seconds;
  return j;
}

namespace {

std::vector<std::pair<std::size_t, double>> snapshot(const LossHistory& hist) {
  std::vector<std::pair<std::size_t, double>> out;
  const std::size_t T = hist.steps();
  for (std::size_t j = 0; j <= 10; ++j) {
    const std::size_t t = 1 + static_cast<std::size_t>(std::llround(static_cast<double>(j * (T - 1)) / 10.0));
    if (!out.empty() && out.back().first == t) continue;
    out.emplace_back(t, hist.probability(t));
  }
  return out;
}

}  // namespace

TrainResult train(const DatasetSplit& split, const ConditionSignals& cond, CNet net, const NoiseSchedule& schedule,
                  const SoftLabelConfig& soft, const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  soft.validate();
  const auto& trainm = split.train;
  if (net.config().num_users != trainm.num_users() || net.config().num_items != trainm.num_items()) {
    throw ConfigError("train: network shape does not match the dataset");
  }
  const auto val_users = users_with_truth(split.validation);
  if (val_users.empty()) throw DataError("train: validation split is empty");
  const std::size_t ks[1] = {cfg.eval_k};

  Rng rng(cfg.seed);
  Rng label_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  LossHistory hist(schedule.steps(), cfg.history_depth);
  AdamState state(net.params());
  EarlyStopping stopper(cfg.patience);

  std::vector<std::size_t> order(trainm.num_users());
  std::iota(order.begin(), order.end(), 0);

  std::ofstream log;
  if (outputs.log_path) {
    if (outputs.log_path->has_parent_path()) std::filesystem::create_directories(outputs.log_path->parent_path());
    log.open(*outputs.log_path);
    if (!log) throw DataError("cannot write training log " + outputs.log_path->string());
  }
  auto ckpt = [&](const char* name, const CNet& which) {
    if (outputs.checkpoint_dir) save_checkpoint(*outputs.checkpoint_dir / name, which);
  };

  TrainResult result;
  result.best = net;
  std::size_t global_step = 0;
  std::vector<std::size_t> users, steps;
  std::vector<double> probs;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      users.assign(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(start + B));
      steps.resize(B);
      probs.resize(B);
      for (std::size_t r = 0; r < B; ++r) {
        auto draw = sample_timestep(hist, rng);
        steps[r] = draw.t;
        probs[r] = draw.n_t;
      }
      ++global_step;
      BatchLoss bl;
      try {
        bl = batch_loss(net, trainm, cond, schedule, soft, users, steps, probs, rng, label_rng);
      } catch (const NumericError& e) {
        throw NumericError("divergence at epoch " + std::to_string(epoch) + ", step " + std::to_string(global_step) +
                           ": " + e.what());
      }
      adam_step(net.params(), bl.grads, state, cfg.adam);
      for (std::size_t r = 0; r < B; ++r) hist.record(steps[r], bl.row_loss[r]);
      loss_sum += bl.loss * static_cast<double>(B);
    }

    EvalReport report;
    try {
      report = evaluate_scores(infer(net, trainm, val_users, cond), val_users, trainm, split.validation, ks);
    } catch (const NumericError& e) {
      throw NumericError("divergence at epoch " + std::to_string(epoch) + " during validation: " + e.what());
    }
    const bool improved = stopper.update(epoch, report.mean_recall[0]);
    if (improved) {
      result.best = net;
      ckpt("best.ckpt", net);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(order.size());
    rec.val_recall = report.mean_recall[0];
    rec.val_ndcg = report.mean_ndcg[0];
    rec.stale = stopper.stale();
    rec.warm = hist.warm();
    rec.n_t = snapshot(hist);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (log.is_open()) log << to_json_record(rec).dump() << '\n' << std::flush;
    result.log.push_back(std::move(rec));
    result.epochs_run = epoch;

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) ckpt("last.ckpt", net);
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.best_metric = stopper.best();
  return result;
}

}  // namespace ldmrec
