#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ldmrec/errors.hpp"
#include "ldmrec/experiment.hpp"

using namespace ldmrec;
namespace fs = std::filesystem;

namespace {

Dataset toy_dataset(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_users = 24;
  s.num_items = 30;
  s.num_clusters = 2;
  s.feature_dim = 4;
  s.min_degree = 5;
  s.max_degree = 9;
  s.taste_strength = 1.0;
  s.seed = seed;
  auto syn = synthesize(s);
  return {split(syn.interactions, {}, seed), syn.visual, syn.textual};
}

ModelSpec toy_model() {
  ModelSpec m;
  m.net.d = 12;
  m.net.d_forward = 4;
  m.net.d_svd = 2;
  m.net.d_pg_hidden = 6;
  m.train.batch_size = 8;
  m.train.max_epochs = 4;
  m.diffusion.steps = 50;
  return m;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ldmrec_test_experiment" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("ablation names and flags") {
  CHECK(parse_ablation("none") == Ablation::none);
  CHECK(parse_ablation("full") == Ablation::none);
  CHECK(ablation_name(Ablation::wo_pg) == "wo_pg");
  CHECK_THROWS_AS(parse_ablation("wo_xx"), ConfigError);
  auto m = toy_model();
  CHECK(apply_ablation(m, Ablation::wo_cg).net.disable_cg);
  CHECK(apply_ablation(m, Ablation::wo_pg).net.disable_pg);
  CHECK(apply_ablation(m, Ablation::wo_sr).soft.p == 0.0);
  CHECK(apply_ablation(m, Ablation::none).soft.p == m.soft.p);
  CHECK_THROWS_AS(parse_experiment_kind("sweep"), ConfigError);
}

TEST_CASE("forward_sweep: one CSV row per step, free first") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::forward_sweep;
  cfg.seeds = {0, 1};
  cfg.forward_steps = {std::nullopt, 1, 5, 25, 50};
  auto dir = scratch("sweep");
  auto rep = run_experiment(cfg, toy_dataset, toy_model(), dir);
  auto csv = lines(dir / "curve.csv");
  REQUIRE(csv.size() == 6);
  CHECK(csv[0] == "x,seeds,recall@10,recall@10_std,ndcg@10,ndcg@10_std,recall@20,recall@20_std,ndcg@20,ndcg@20_std");
  CHECK(csv[1].rfind("free,2,", 0) == 0);
  CHECK(csv[5].rfind("50,2,", 0) == 0);
  CHECK(rep.point("free", "recall@20").seeds == 2);
  CHECK(lines(dir / "runs.jsonl").size() == 10);
  CHECK(fs::exists(dir / "summary.json"));

  cfg.forward_steps = {51};
  CHECK_THROWS_AS(run_experiment(cfg, toy_dataset, toy_model()), ConfigError);
}

TEST_CASE("noise_robustness: one training run per fraction and variant") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::noise_robustness;
  cfg.seeds = {3};
  cfg.noise_variants = {Ablation::none};
  auto dir = scratch("noise");
  auto rep = run_experiment(cfg, toy_dataset, toy_model(), dir);
  CHECK(rep.runs.size() == 4);
  CHECK(lines(dir / "curve.csv").size() == 5);
  const auto& deg = rep.summary.at("relative_degradation").at("full");
  CHECK(deg.at("0").get<double>() == 0.0);
  const double base = rep.point("0", "full/recall@20").mean;
  CHECK(deg.at("0.3").get<double>() == doctest::Approx((base - rep.point("0.3", "full/recall@20").mean) / base));
}

TEST_CASE("ablation: four variants in one summary") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::ablation;
  cfg.seeds = {0};
  auto rep = run_experiment(cfg, toy_dataset, toy_model());
  for (const char* v : {"full", "wo_cg", "wo_pg", "wo_sr"}) CHECK(rep.point(v, "recall@20").seeds == 1);
  CHECK(rep.runs.size() == 4);
  CHECK_THROWS_AS(rep.point("wo_xx", "recall@20"), IndexError);
}

TEST_CASE("efficiency: evaluation counts differ by exactly T") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::efficiency;
  cfg.seeds = {0};
  auto rep = run_experiment(cfg, toy_dataset, toy_model());
  CHECK(rep.point("forward_free", "evals_per_user").mean == 1.0);
  CHECK(rep.point("t_step_chain", "evals_per_user").mean == 50.0);
  CHECK(rep.summary.at("evals_ratio").get<double>() == 50.0);
}

TEST_CASE("checkpointed forward_sweep reuses the model; a missing checkpoint is a config error") {
  auto dir = scratch("ckpt");
  auto model = toy_model();
  model.train.seed = 0;
  const auto data = toy_dataset(0);
  std::vector<std::size_t> ks{10};
  auto o = train_and_evaluate(data, model, 0, ks, TrainOutputs{std::nullopt, dir});

  ExperimentConfig cfg;
  cfg.seeds = {0};
  cfg.ks = ks;
  cfg.forward_steps = {std::nullopt};
  cfg.checkpoint = dir / "best.ckpt";
  auto rep = run_experiment(cfg, toy_dataset, model);
  CHECK(rep.point("free", "recall@10").mean == o.test.mean_recall[0]);

  cfg.checkpoint = dir / "absent.ckpt";
  CHECK_THROWS_AS(run_experiment(cfg, toy_dataset, model), ConfigError);
}

TEST_CASE("experiments are repeatable") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::ablation;
  cfg.seeds = {2};
  cfg.ablations = {Ablation::none, Ablation::wo_sr};
  auto a = scratch("rep_a"), b = scratch("rep_b");
  run_experiment(cfg, toy_dataset, toy_model(), a);
  run_experiment(cfg, toy_dataset, toy_model(), b);
  CHECK(lines(a / "curve.csv") == lines(b / "curve.csv"));
  CHECK(lines(a / "summary.json") == lines(b / "summary.json"));
}
