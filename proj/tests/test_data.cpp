#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ldmrec/data.hpp"
#include "ldmrec/errors.hpp"

using namespace ldmrec;
namespace fs = std::filesystem;

namespace {

InteractionMatrix parse(const std::string& text) {
  std::istringstream in(text);
  return parse_interactions(in);
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ldmrec_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

InteractionMatrix random_matrix(std::size_t users, std::size_t items, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution b(p);
  std::vector<std::vector<std::uint32_t>> rows(users);
  for (std::size_t u = 0; u < users; ++u)
    for (std::uint32_t i = 0; i < items; ++i)
      if (b(rng)) rows[u].push_back(i);
  return InteractionMatrix(users, items, std::move(rows));
}

// Repeated simultaneous sweeps until nothing changes; returns surviving
// (user, item) pairs in original indices.
std::set<std::pair<std::size_t, std::size_t>> kcore_oracle(const InteractionMatrix& r, std::size_t k) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < r.num_users(); ++u)
    for (auto i : r.row(u)) edges.emplace(u, i);
  for (;;) {
    std::map<std::size_t, std::size_t> ud, id;
    for (auto [u, i] : edges) {
      ++ud[u];
      ++id[i];
    }
    std::set<std::pair<std::size_t, std::size_t>> next;
    for (auto [u, i] : edges)
      if (ud[u] >= k && id[i] >= k) next.emplace(u, i);
    if (next == edges) return edges;
    edges = std::move(next);
  }
}

}  // namespace

TEST_CASE("load: duplicates collapse") {
  auto r = parse("a\tx\na\tx\n");
  CHECK(r.num_users() == 1);
  CHECK(r.num_items() == 1);
  CHECK(r.nnz() == 1);
}

TEST_CASE("load: fully crossed matrix has density 1") {
  auto r = parse("u1\ti1\nu1\ti2\nu2\ti1\nu2\ti2\nu3\ti1\nu3\ti2\n");
  CHECK(r.num_users() == 3);
  CHECK(r.num_items() == 2);
  CHECK(r.density() == 1.0);
}

TEST_CASE("load: comments and blank lines ignored, numeric ids ordered numerically") {
  auto r = parse("# header\n10\t7\n\n9\t100\n9\t7\n");
  CHECK(r.user_ids() == std::vector<std::string>{"9", "10"});
  CHECK(r.item_ids() == std::vector<std::string>{"7", "100"});
  CHECK(r.row(0).size() == 2);
  CHECK(r.row(1).size() == 1);
}

TEST_CASE("load: malformed line reports its line number") {
  try {
    parse("a\tb\n# fine\nbroken line\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line_number == 3);
  }
  CHECK_THROWS_AS(parse("a\tb\tc\n"), ParseError);
}

TEST_CASE("load: empty file is an empty-dataset error") {
  CHECK_THROWS_AS(parse(""), EmptyDatasetError);
  CHECK_THROWS_AS(parse("# only a comment\n"), EmptyDatasetError);
}

TEST_CASE("load -> save -> reload is identity on the index space") {
  auto dir = temp_dir("roundtrip");
  auto r = parse("bob\tz\nalice\ty\nbob\ty\ncarol\tx\n");
  save_interactions(dir / "r.tsv", r);
  auto back = load_interactions(dir / "r.tsv");
  CHECK(back == r);
}

TEST_CASE("k-core: k=1 leaves the input unchanged") {
  auto r = parse("a\tx\nb\ty\nb\tx\n");
  CHECK(k_core_filter(r, 1) == r);
}

TEST_CASE("k-core: star graph with k=2 is empty") {
  auto r = parse("u\t1\nu\t2\nu\t3\nu\t4\nu\t5\n");
  CHECK_THROWS_AS(k_core_filter(r, 2), EmptyDatasetError);
}

TEST_CASE("k-core: matches repeated-sweep oracle on random 50x50") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto r = random_matrix(50, 50, 0.07, seed);
    std::vector<std::string> uids, iids;
    for (std::size_t i = 0; i < 50; ++i) {
      uids.push_back(std::to_string(i));
      iids.push_back(std::to_string(i));
    }
    r.set_ids(uids, iids);
    auto expected = kcore_oracle(r, 3);
    if (expected.empty()) {
      CHECK_THROWS_AS(k_core_filter(r, 3), EmptyDatasetError);
      continue;
    }
    auto f = k_core_filter(r, 3);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (std::size_t u = 0; u < f.num_users(); ++u)
      for (auto i : f.row(u)) got.emplace(std::stoul(f.user_ids()[u]), std::stoul(f.item_ids()[i]));
    CHECK(got == expected);
    for (std::size_t u = 0; u < f.num_users(); ++u) CHECK(f.user_degree(u) >= 3);
    for (auto d : f.item_degrees()) CHECK(d >= 3);
  }
}

TEST_CASE("split: exact 8/1/1 proportions, determinism, partition") {
  std::vector<std::vector<std::uint32_t>> rows{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 2}, {3, 4, 5}};
  InteractionMatrix r(3, 10, rows);
  auto s = split(r, {}, 42);
  CHECK(s.train.user_degree(0) == 8);
  CHECK(s.validation.user_degree(0) == 1);
  CHECK(s.test.user_degree(0) == 1);
  CHECK(s.train.user_degree(1) == 2);
  CHECK(s.test.user_degree(1) == 0);
  CHECK(s.train.user_degree(2) >= 1);

  auto again = split(r, {}, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  auto big = random_matrix(40, 30, 0.3, 9);
  auto bs = split(big, {}, 3);
  for (std::size_t u = 0; u < big.num_users(); ++u) {
    std::multiset<std::uint32_t> all;
    for (auto* m : {&bs.train, &bs.validation, &bs.test})
      for (auto i : m->row(u)) all.insert(i);
    CHECK(all == std::multiset<std::uint32_t>(big.row(u).begin(), big.row(u).end()));
    if (big.user_degree(u) > 0) CHECK(bs.train.user_degree(u) >= 1);
  }
}

TEST_CASE("split: bad ratios are rejected") {
  auto r = random_matrix(5, 5, 0.5, 1);
  CHECK_THROWS_AS(split(r, {0.5, 0.3, 0.3}, 0), ConfigError);
  CHECK_THROWS_AS(split(r, {1.0, 0.0, 0.0}, 0), ConfigError);
}

TEST_CASE("split persistence round-trips") {
  auto dir = temp_dir("split");
  auto r = parse("a\tx\na\ty\na\tz\na\tw\nb\tx\nb\ty\nb\tz\n");
  auto s = split(r, {}, 5);
  save_split(dir, s, 5, {});
  auto back = load_split(dir);
  CHECK(back.train == s.train);
  CHECK(back.validation == s.validation);
  CHECK(back.test == s.test);
  fs::remove(dir / "test.tsv");
  CHECK_THROWS_AS(load_split(dir), DataError);
}

TEST_CASE("synthesize: noise 0 keeps every interaction in-cluster") {
  SyntheticSpec spec;
  spec.noise_rate = 0.0;
  spec.seed = 4;
  auto d = synthesize(spec);
  for (std::size_t u = 0; u < spec.num_users; ++u)
    for (auto i : d.interactions.row(u)) CHECK(d.item_cluster[i] == d.user_cluster[u]);
}

TEST_CASE("synthesize: a single cluster has one shared centroid") {
  SyntheticSpec spec;
  spec.num_clusters = 1;
  spec.feature_jitter = 0.0;
  auto d = synthesize(spec);
  for (std::size_t i = 1; i < spec.num_items; ++i) {
    CHECK(d.textual.values.row(i)[0] == d.textual.values.row(0)[0]);
    CHECK(d.visual.values.row(i)[3] == d.visual.values.row(0)[3]);
  }
}

TEST_CASE("synthesize: measured cross-cluster fraction tracks noise_rate") {
  SyntheticSpec spec;  // 200 users, 100 items, 4 clusters, noise 0.1
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spec.seed = seed;
    auto d = synthesize(spec);
    std::size_t cross = 0;
    for (std::size_t u = 0; u < spec.num_users; ++u)
      for (auto i : d.interactions.row(u)) cross += d.item_cluster[i] != d.user_cluster[u];
    const double frac = static_cast<double>(cross) / static_cast<double>(d.interactions.nnz());
    CHECK(std::abs(frac - 0.1) <= 0.03);
  }
}

TEST_CASE("inject_noise: fraction 0, ceiling arithmetic and recount oracle") {
  auto r = random_matrix(30, 40, 0.25, 12);
  CHECK(inject_noise(r, 0.0, 1) == r);

  std::vector<std::vector<std::uint32_t>> rows{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  InteractionMatrix ten(1, 50, rows);
  auto noisy = inject_noise(ten, 0.2, 3);
  CHECK(noisy.user_degree(0) == 12);
  for (auto i : ten.row(0)) CHECK(noisy.contains(0, i));

  std::size_t expected = 0;
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    const auto deg = r.user_degree(u);
    if (deg < r.num_items()) expected += static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(deg)));
  }
  auto n = inject_noise(r, 0.2, 7);
  CHECK(n.nnz() - r.nnz() == expected);
  CHECK(inject_noise(r, 0.2, 7) == n);
}

TEST_CASE("inject_noise: complete rows are skipped") {
  std::vector<std::vector<std::uint32_t>> rows{{0, 1, 2}};
  InteractionMatrix full(1, 3, rows);
  CHECK(inject_noise(full, 0.5, 1) == full);
}

TEST_CASE("features: CSV and FMX1 round-trips") {
  auto dir = temp_dir("features");
  FeatureMatrix f{DenseMatrix{{1.5, -2.0, 0.25}, {3.0, 4.0, 5.0}}};
  save_features_csv(dir / "f.csv", f);
  CHECK(load_features(dir / "f.csv").values == f.values);
  save_features_fmx1(dir / "f.bin", f);
  auto b = load_features(dir / "f.bin");
  CHECK(b.values == f.values);  // values are exactly representable in f32
  CHECK(fs::file_size(dir / "f.bin") == 12 + 6 * 4);

  std::ofstream(dir / "bad.csv") << "1,2\n3\n";
  CHECK_THROWS_AS(load_features(dir / "bad.csv"), ParseError);
}
