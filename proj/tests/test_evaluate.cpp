#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ldmrec/errors.hpp"
#include "ldmrec/evaluate.hpp"
#include "metric_oracle.hpp"
#include "test_util.hpp"

using namespace ldmrec;
using ldmrec::testing::max_abs_diff;
using ldmrec::testing::random_matrix;

namespace {

struct Fixture {
  CNetConfig config;
  CNet net;
  ConditionSignals cond;
  InteractionMatrix history;

  explicit Fixture(bool disable_cg = false) {
    config.num_users = 5;
    config.num_items = 12;
    config.visual_dim = 3;
    config.text_dim = 2;
    config.d = 6;
    config.d_forward = 4;
    config.d_svd = 2;
    config.d_pg_hidden = 3;
    config.disable_cg = disable_cg;
    net = CNet::init(config, 3);
    std::mt19937_64 rng(3);
    net.params()["z_in"] = random_matrix(5, 4, rng);
    cond = {random_matrix(5, 4, rng), random_matrix(5, 3, rng), random_matrix(5, 2, rng)};
    history = InteractionMatrix(5, 12, {{0, 3}, {1, 2, 5}, {7}, {}, {4, 8, 11}});
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("rank_topk: ties go to the lowest index, train items excluded") {
  std::vector<double> flat(10, 0.5);
  std::vector<std::uint32_t> train{1, 3};
  auto r = rank_topk(flat, train, 4);
  CHECK(r.items == std::vector<std::uint32_t>{0, 2, 4, 5});

  std::vector<double> peak(10, 0.0);
  peak[7] = 3.0;
  CHECK(rank_topk(peak, train, 3).items.front() == 7);

  CHECK_THROWS_AS(rank_topk(flat, train, 9), ConfigError);
}

TEST_CASE("rank_topk matches a full sort on random scores") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(50);
    for (auto& x : s) x = u(rng);
    std::set<std::uint32_t> train{3, 9, 17, static_cast<std::uint32_t>(trial)};
    std::vector<std::uint32_t> train_row(train.begin(), train.end());
    auto r = rank_topk(s, train_row, 10);
    auto oracle = ldmrec::testing::oracle_metrics(s, train, {0}, 10);
    CHECK(r.items == oracle.top);
    for (std::size_t i = 1; i < r.scores.size(); ++i) CHECK(r.scores[i - 1] >= r.scores[i]);
  }
}

TEST_CASE("recall and NDCG: hand-computed cases") {
  RankedList one{{4, 1, 2}, {}};
  std::vector<std::uint32_t> t1{4};
  auto m = recall_ndcg(one, t1, 3);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == 1.0);

  std::vector<std::uint32_t> t2{1, 9};
  CHECK(recall_ndcg(one, t2, 3).recall == 0.5);

  // Relevant at ranks 2, 5, 7 with K = 10.
  RankedList ten{{0, 10, 1, 2, 11, 3, 12, 4, 5, 6}, {}};
  std::vector<std::uint32_t> t3{10, 11, 12};
  const double dcg = 1 / std::log2(3.0) + 1 / std::log2(6.0) + 1 / std::log2(8.0);
  const double idcg = 1 + 1 / std::log2(3.0) + 1 / std::log2(4.0);
  CHECK(recall_ndcg(ten, t3, 10).ndcg == doctest::Approx(dcg / idcg).epsilon(1e-15));
  CHECK(recall_ndcg(ten, t3, 10).recall == 1.0);

  std::vector<std::uint32_t> empty;
  CHECK_THROWS_AS(recall_ndcg(one, empty, 3), UsageError);
}

TEST_CASE("evaluate_scores agrees exactly with the brute-force oracle on 100 random cases") {
  std::mt19937_64 rng(2024);
  for (int c = 0; c < 100; ++c) {
    const std::size_t users = 1 + rng() % 6, items = 10 + rng() % 30, k = 1 + rng() % 8;
    std::vector<std::vector<std::uint32_t>> train_rows(users), test_rows(users);
    std::bernoulli_distribution b(0.2);
    for (std::size_t u = 0; u < users; ++u)
      for (std::uint32_t i = 0; i < items; ++i) {
        if (b(rng)) {
          (rng() % 3 == 0 ? test_rows : train_rows)[u].push_back(i);
        }
      }
    InteractionMatrix train(users, items, train_rows), test(users, items, test_rows);
    auto us = users_with_truth(test);
    // Coarse scores so ties actually occur.
    DenseMatrix s(us.size(), items);
    for (auto& x : s.values()) x = static_cast<double>(rng() % 5);
    std::vector<std::size_t> ks{k, k + 2};
    bool fits = true;
    for (auto u : us) fits = fits && items - train.user_degree(u) >= k + 2;
    if (!fits) continue;
    auto rep = evaluate_scores(s, us, train, test, ks);
    for (std::size_t r = 0; r < us.size(); ++r) {
      std::set<std::uint32_t> tr(train.row(us[r]).begin(), train.row(us[r]).end());
      std::set<std::uint32_t> te(test.row(us[r]).begin(), test.row(us[r]).end());
      for (std::size_t j = 0; j < ks.size(); ++j) {
        auto o = ldmrec::testing::oracle_metrics(s.row(r), tr, te, ks[j]);
        CHECK(rep.recall[j][r] == o.recall);
        CHECK(rep.ndcg[j][r] == o.ndcg);
        CHECK(rep.recall[j][r] >= 0.0);
        CHECK(rep.ndcg[j][r] <= 1.0);
      }
    }
  }
}

TEST_CASE("infer: one network evaluation per user, deterministic, equals the forward-free forward pass") {
  Fixture f;
  std::vector<std::size_t> users{0, 1, 2, 3, 4};
  f.net.reset_evaluations();
  auto a = infer(f.net, f.history, users, f.cond, 2);
  CHECK(f.net.evaluations() == 5);
  CHECK(infer(f.net, f.history, users, f.cond) == a);

  DenseMatrix x(5, 12);
  for (std::size_t u = 0; u < 5; ++u) f.history.dense_row_into(u, x.row(u));
  std::vector<std::optional<std::size_t>> none(5);
  CHECK(f.net.predict(x, users, none, f.cond) == a);

  auto row = infer(f.net, f.history, 2, f.cond);
  CHECK(std::equal(row.begin(), row.end(), a.row(2).begin()));
  CHECK_THROWS_AS(infer(f.net, f.history, 9, f.cond), IndexError);
}

TEST_CASE("infer_with_forward_steps: seeded, noisy, and close to forward-free when alpha_bar is near 1") {
  Fixture f(true);  // without CG the step embedding does not enter
  std::vector<std::size_t> users{0, 1, 4};
  auto schedule = NoiseSchedule::build(100);
  Rng a(1), b(1), c(2);
  auto sa = infer_with_forward_steps(f.net, f.history, users, 50, schedule, f.cond, a);
  auto sb = infer_with_forward_steps(f.net, f.history, users, 50, schedule, f.cond, b);
  auto sc = infer_with_forward_steps(f.net, f.history, users, 50, schedule, f.cond, c);
  CHECK(sa == sb);
  CHECK(max_abs_diff(sa, sc) > 0.0);

  auto tiny = NoiseSchedule::build(10, 1e-12, 0.0001);
  Rng r(3);
  auto near = infer_with_forward_steps(f.net, f.history, users, 1, tiny, f.cond, r);
  CHECK(max_abs_diff(near, infer(f.net, f.history, users, f.cond)) < 1e-6);
  CHECK_THROWS_AS(infer_with_forward_steps(f.net, f.history, users, 0, schedule, f.cond, r), ConfigError);
}

TEST_CASE("reverse chain costs T evaluations per user") {
  Fixture f;
  std::vector<std::size_t> users{0, 1, 2};
  auto schedule = NoiseSchedule::build(7);
  Rng rng(4);
  f.net.reset_evaluations();
  auto s = reverse_chain(f.net, f.history, users, schedule, f.cond, rng);
  CHECK(f.net.evaluations() == 7 * 3);
  CHECK(s.rows() == 3);
  CHECK(s.all_finite());
}

TEST_CASE("popularity baseline scores by train counts") {
  InteractionMatrix tr(3, 4, {{0, 1}, {1}, {1, 3}});
  std::vector<std::size_t> users{0, 2};
  auto s = popularity_scores(tr, users);
  CHECK(s(0, 1) == 3.0);
  CHECK(s(1, 3) == 1.0);
  CHECK(s(1, 2) == 0.0);
}

TEST_CASE("reports: train items never recommended, files written and byte-stable") {
  Fixture f;
  InteractionMatrix test(5, 12, {{1}, {0, 9}, {}, {3}, {2}});
  std::vector<std::size_t> ks{3, 5};
  auto rep = evaluate(f.net, f.history, test, f.cond, ks);
  CHECK(rep.users == std::vector<std::size_t>{0, 1, 3, 4});
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(rep.mean_recall[j] >= 0.0);
    CHECK(rep.mean_recall[j] <= 1.0);
  }
  CHECK(rep.recall_at(5) == rep.mean_recall[1]);
  CHECK_THROWS_AS(rep.recall_at(7), IndexError);

  auto dir = std::filesystem::temp_directory_path() / "ldmrec_test_eval";
  write_report(dir / "a", rep);
  write_report(dir / "b", evaluate(f.net, f.history, test, f.cond, ks));
  CHECK(slurp(dir / "a" / "metrics.json") == slurp(dir / "b" / "metrics.json"));
  auto csv = slurp(dir / "a" / "metrics.csv");
  CHECK(csv.rfind("user,recall@3,ndcg@3,recall@5,ndcg@5\n", 0) == 0);
  auto j = nlohmann::json::parse(slurp(dir / "a" / "metrics.json"));
  CHECK(j["metrics"].size() == 4);
}
