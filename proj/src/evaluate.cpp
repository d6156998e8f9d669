#include "ldmrec/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ldmrec/errors.hpp"

namespace ldmrec {

namespace {

DenseMatrix history_rows(const InteractionMatrix& history, std::span<const std::size_t> users) {
  DenseMatrix x(users.size(), history.num_items());
  for (std::size_t r = 0; r < users.size(); ++r) {
    if (users[r] >= history.num_users()) throw IndexError("unknown user index " + std::to_string(users[r]));
    history.dense_row_into(users[r], x.row(r));
  }
  return x;
}

void copy_rows(const DenseMatrix& src, DenseMatrix& dst, std::size_t offset) {
  std::copy(src.values().begin(), src.values().end(), dst.values().begin() + static_cast<long>(offset * dst.cols()));
}

template <typename Fn>
DenseMatrix chunked(std::span<const std::size_t> users, std::size_t num_items, std::size_t batch, Fn&& fn) {
  if (batch == 0) throw ConfigError("inference batch must be positive");
  DenseMatrix out(users.size(), num_items);
  for (std::size_t start = 0; start < users.size(); start += batch) {
    auto chunk = users.subspan(start, std::min(batch, users.size() - start));
    copy_rows(fn(chunk), out, start);
  }
  return out;
}

}  // namespace

DenseMatrix infer(const CNet& net, const InteractionMatrix& history, std::span<const std::size_t> users,
                  const ConditionSignals& cond, std::size_t batch) {
  return chunked(users, history.num_items(), batch, [&](std::span<const std::size_t> chunk) {
    std::vector<std::optional<std::size_t>> steps(chunk.size());
    return net.predict(history_rows(history, chunk), chunk, steps, cond);
  });
}

std::vector<double> infer(const CNet& net, const InteractionMatrix& history, std::size_t user,
                          const ConditionSignals& cond) {
  const std::size_t users[1] = {user};
  const DenseMatrix scores = infer(net, history, users, cond);
  auto row = scores.row(0);
  return {row.begin(), row.end()};
}

DenseMatrix infer_with_forward_steps(const CNet& net, const InteractionMatrix& history,
                                     std::span<const std::size_t> users, std::size_t t_fwd,
                                     const NoiseSchedule& schedule, const ConditionSignals& cond, Rng& rng,
                                     std::size_t batch) {
  if (t_fwd < 1 || t_fwd > schedule.steps()) throw ConfigError("t_fwd must be in 1..T");
  return chunked(users, history.num_items(), batch, [&](std::span<const std::size_t> chunk) {
    DenseMatrix x = history_rows(history, chunk);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      std::vector<double> clean(x.row(r).begin(), x.row(r).end());
      q_sample(clean, t_fwd, schedule, rng, x.row(r));
    }
    std::vector<std::optional<std::size_t>> steps(chunk.size(), t_fwd);
    return net.predict(x, chunk, steps, cond);
  });
}

DenseMatrix reverse_chain(const CNet& net, const InteractionMatrix& history, std::span<const std::size_t> users,
                          const NoiseSchedule& schedule, const ConditionSignals& cond, Rng& rng,
                          std::size_t batch) {
  const std::size_t T = schedule.steps();
  return chunked(users, history.num_items(), batch, [&](std::span<const std::size_t> chunk) {
    DenseMatrix x = history_rows(history, chunk);
    std::vector<double> tmp(x.cols());
    auto renoise = [&](DenseMatrix& m, std::size_t t) {
      for (std::size_t r = 0; r < m.rows(); ++r) {
        std::copy(m.row(r).begin(), m.row(r).end(), tmp.begin());
        q_sample(tmp, t, schedule, rng, m.row(r));
      }
    };
    renoise(x, T);
    DenseMatrix x0;
    for (std::size_t t = T; t >= 1; --t) {
      std::vector<std::optional<std::size_t>> steps(chunk.size(), t);
      x0 = net.predict(x, chunk, steps, cond);
      if (t > 1) {
        x = x0;
        renoise(x, t - 1);
      }
    }
    return x0;
  });
}

DenseMatrix popularity_scores(const InteractionMatrix& train, std::span<const std::size_t> users) {
  const auto deg = train.item_degrees();
  DenseMatrix out(users.size(), train.num_items());
  for (std::size_t r = 0; r < users.size(); ++r)
    for (std::size_t i = 0; i < deg.size(); ++i) out(r, i) = static_cast<double>(deg[i]);
  return out;
}

RankedList rank_topk(std::span<const double> scores, std::span<const std::uint32_t> train_row, std::size_t k) {
  std::vector<char> masked(scores.size(), 0);
  for (auto i : train_row) {
    if (i >= scores.size()) throw IndexError("train item outside score row");
    masked[i] = 1;
  }
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    if (!masked[i]) candidates.push_back(i);
  if (k > candidates.size()) throw ConfigError("K exceeds the number of rankable items");
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(k), candidates.end(), better);
  RankedList out;
  out.items.assign(candidates.begin(), candidates.begin() + static_cast<long>(k));
  for (auto i : out.items) out.scores.push_back(scores[i]);
  return out;
}

MetricValues recall_ndcg(const RankedList& ranked, std::span<const std::uint32_t> truth, std::size_t k) {
  if (truth.empty()) throw UsageError("recall_ndcg needs a non-empty truth row");
  const std::size_t n = std::min(k, ranked.items.size());
  double hits = 0.0, dcg = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (std::find(truth.begin(), truth.end(), ranked.items[r]) != truth.end()) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, truth.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return {hits / static_cast<double>(truth.size()), dcg / idcg};
}

double EvalReport::recall_at(std::size_t k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw IndexError("K=" + std::to_string(k) + " not in report");
  return mean_recall[static_cast<std::size_t>(it - ks.begin())];
}

double EvalReport::ndcg_at(std::size_t k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw IndexError("K=" + std::to_string(k) + " not in report");
  return mean_ndcg[static_cast<std::size_t>(it - ks.begin())];
}

std::vector<std::size_t> users_with_truth(const InteractionMatrix& truth) {
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < truth.num_users(); ++u)
    if (truth.user_degree(u) > 0) users.push_back(u);
  return users;
}

EvalReport evaluate_scores(const DenseMatrix& scores, std::span<const std::size_t> users,
                           const InteractionMatrix& train, const InteractionMatrix& truth,
                           std::span<const std::size_t> ks) {
  if (scores.rows() != users.size() || scores.cols() != train.num_items()) {
    throw DimensionError("score matrix does not match users x items");
  }
  if (ks.empty()) throw ConfigError("at least one K is required");
  EvalReport rep;
  rep.ks.assign(ks.begin(), ks.end());
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  rep.recall.assign(ks.size(), {});
  rep.ndcg.assign(ks.size(), {});
  for (std::size_t r = 0; r < users.size(); ++r) {
    const auto u = users[r];
    auto truth_row = truth.row(u);
    if (truth_row.empty()) continue;
    auto train_row = train.row(u);
    auto ranked = rank_topk(scores.row(r), train_row, kmax);
    for (auto item : ranked.items) {
      if (std::binary_search(train_row.begin(), train_row.end(), item)) {
        throw std::logic_error("ranking returned a train item");
      }
    }
    rep.users.push_back(u);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      auto m = recall_ndcg(ranked, truth_row, ks[j]);
      rep.recall[j].push_back(m.recall);
      rep.ndcg[j].push_back(m.ndcg);
    }
  }
  for (std::size_t j = 0; j < ks.size(); ++j) {
    const double n = std::max<std::size_t>(1, rep.users.size());
    rep.mean_recall.push_back(std::accumulate(rep.recall[j].begin(), rep.recall[j].end(), 0.0) / n);
    rep.mean_ndcg.push_back(std::accumulate(rep.ndcg[j].begin(), rep.ndcg[j].end(), 0.0) / n);
  }
  return rep;
}

EvalReport evaluate(const CNet& net, const InteractionMatrix& train, const InteractionMatrix& truth,
                    const ConditionSignals& cond, std::span<const std::size_t> ks) {
  auto users = users_with_truth(truth);
  return evaluate_scores(infer(net, train, users, cond), users, train, truth, ks);
}

nlohmann::json report_json(const EvalReport& rep) {
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t j = 0; j < rep.ks.size(); ++j) {
    metrics["recall@" + std::to_string(rep.ks[j])] = rep.mean_recall[j];
    metrics["ndcg@" + std::to_string(rep.ks[j])] = rep.mean_ndcg[j];
  }
  return nlohmann::json{{"metrics", metrics},
                        {"ks", rep.ks},
                        {"users_evaluated", rep.users.size()},
                        {"seed", rep.seed},
                        {"config", rep.config}};
}

void write_report(const std::filesystem::path& dir, const EvalReport& rep) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.json");
    out << report_json(rep).dump(2) << '\n';
    if (!out) throw DataError("cannot write " + (dir / "metrics.json").string());
  }
  std::ofstream out(dir / "metrics.csv");
  out << "user";
  for (auto k : rep.ks) out << ",recall@" << k << ",ndcg@" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < rep.users.size(); ++r) {
    out << rep.users[r];
    for (std::size_t j = 0; j < rep.ks.size(); ++j) out << ',' << rep.recall[j][r] << ',' << rep.ndcg[j][r];
    out << '\n';
  }
  if (!out) throw DataError("cannot write " + (dir / "metrics.csv").string());
}

}  // namespace ldmrec
