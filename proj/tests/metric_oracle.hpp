#pragma once

// Brute-force ranking metrics: sort the whole catalog, drop train items, then
// walk the list. Shares no code with the library's ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <vector>

namespace ldmrec::testing {

struct OracleMetrics {
  std::vector<std::uint32_t> top;
  double recall = 0.0;
  double ndcg = 0.0;
};

inline OracleMetrics oracle_metrics(std::span<const double> scores, const std::set<std::uint32_t>& train,
                                    const std::set<std::uint32_t>& truth, std::size_t k) {
  std::vector<std::uint32_t> all(scores.size());
  std::iota(all.begin(), all.end(), 0u);
  std::stable_sort(all.begin(), all.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  OracleMetrics m;
  for (auto i : all) {
    if (m.top.size() == k) break;
    if (!train.count(i)) m.top.push_back(i);
  }
  double hits = 0.0, dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < m.top.size(); ++r) {
    if (truth.count(m.top[r])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(r + 2));
    }
  }
  for (std::size_t r = 0; r < std::min(k, truth.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r + 2));
  m.recall = hits / static_cast<double>(truth.size());
  m.ndcg = dcg / idcg;
  return m;
}

}  // namespace ldmrec::testing
