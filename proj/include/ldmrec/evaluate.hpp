#pragma once

// Forward-free inference, top-K ranking and Recall/NDCG.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ldmrec/cnet.hpp"
#include "ldmrec/data.hpp"
#include "ldmrec/diffusion.hpp"
#include "json.hpp"

namespace ldmrec {

// Scores for the given users from one network pass on their uncorrupted
// history rows; the step embedding is z_in alone. Rows are processed in
// chunks of `batch` users.
DenseMatrix infer(const CNet& net, const InteractionMatrix& history, std::span<const std::size_t> users,
                  const ConditionSignals& cond, std::size_t batch = 256);
std::vector<double> infer(const CNet& net, const InteractionMatrix& history, std::size_t user,
                          const ConditionSignals& cond);

// Corrupt the history to step t_fwd, then predict once with step t_fwd.
DenseMatrix infer_with_forward_steps(const CNet& net, const InteractionMatrix& history,
                                     std::span<const std::size_t> users, std::size_t t_fwd,
                                     const NoiseSchedule& schedule, const ConditionSignals& cond, Rng& rng,
                                     std::size_t batch = 256);

// Reference T-step loop: start from x_T = q_sample(x_in, T), and for t = T..1
// predict x0 and re-noise it to t - 1. Costs T network evaluations per user.
// Used only as a cost/quality baseline.
DenseMatrix reverse_chain(const CNet& net, const InteractionMatrix& history, std::span<const std::size_t> users,
                          const NoiseSchedule& schedule, const ConditionSignals& cond, Rng& rng,
                          std::size_t batch = 256);

// Item train counts as scores for every user.
DenseMatrix popularity_scores(const InteractionMatrix& train, std::span<const std::size_t> users);

struct RankedList {
  std::vector<std::uint32_t> items;
  std::vector<double> scores;
};

// Train items are excluded; ties go to the lower item index.
RankedList rank_topk(std::span<const double> scores, std::span<const std::uint32_t> train_row, std::size_t k);

struct MetricValues {
  double recall = 0.0;
  double ndcg = 0.0;
};

// Binary gain, discount 1 / log2(rank + 1). `truth` must be non-empty.
MetricValues recall_ndcg(const RankedList& ranked, std::span<const std::uint32_t> truth, std::size_t k);

struct EvalReport {
  std::vector<std::size_t> ks;
  std::vector<std::size_t> users;           // users with non-empty truth
  std::vector<std::vector<double>> recall;  // [k index][user index]
  std::vector<std::vector<double>> ndcg;
  std::vector<double> mean_recall;          // per k
  std::vector<double> mean_ndcg;
  std::uint64_t seed = 0;
  nlohmann::json config;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

// Ranks `scores` (one row per entry of `users`) against `truth`, masking the
// `train` rows.
EvalReport evaluate_scores(const DenseMatrix& scores, std::span<const std::size_t> users,
                           const InteractionMatrix& train, const InteractionMatrix& truth,
                           std::span<const std::size_t> ks);

// Users whose `truth` row is non-empty.
std::vector<std::size_t> users_with_truth(const InteractionMatrix& truth);

// Forward-free evaluation of every user with a non-empty truth row.
EvalReport evaluate(const CNet& net, const InteractionMatrix& train, const InteractionMatrix& truth,
                    const ConditionSignals& cond, std::span<const std::size_t> ks);

// metrics.json (means, config echo, seed) and metrics.csv (per-user rows).
nlohmann::json report_json(const EvalReport& report);
void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace ldmrec
