#include "ldmrec/cli.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ldmrec/errors.hpp"
#include "ldmrec/kernels.hpp"

#ifndef LDMREC_VERSION
#define LDMREC_VERSION "0.0.0"
#endif

namespace ldmrec {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string tool_version() { return LDMREC_VERSION; }

namespace {

// ------------------------------------------------------------ value codecs

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' expects " + expected);
}

json encode(std::uint64_t v) { return v; }
json encode(int v) { return v; }
json encode(double v) { return v; }
json encode(bool v) { return v; }
json encode(const std::string& v) { return v; }
json encode(const std::vector<std::uint64_t>& v) { return v; }
json encode(const std::vector<double>& v) { return v; }
json encode(const ExperimentKind& v) { return experiment_kind_name(v); }
json encode(const std::optional<fs::path>& v) { return v ? v->string() : std::string(); }

json encode(const std::vector<std::optional<std::size_t>>& v) {
  json out = json::array();
  for (const auto& t : v) {
    if (t) out.push_back(*t);
    else out.push_back("free");
  }
  return out;
}

json encode(const std::vector<Ablation>& v) {
  json out = json::array();
  for (auto a : v) out.push_back(ablation_name(a));
  return out;
}

std::uint64_t decode_unsigned(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  bad_type(key, "a non-negative integer");
}

void decode(const json& v, std::uint64_t& out, const std::string& key) { out = decode_unsigned(v, key); }

void decode(const json& v, int& out, const std::string& key) {
  if (!v.is_number_integer()) bad_type(key, "an integer");
  out = v.get<int>();
}

void decode(const json& v, double& out, const std::string& key) {
  if (!v.is_number()) bad_type(key, "a number");
  out = v.get<double>();
}

void decode(const json& v, bool& out, const std::string& key) {
  if (!v.is_boolean()) bad_type(key, "true or false");
  out = v.get<bool>();
}

void decode(const json& v, std::string& out, const std::string& key) {
  if (!v.is_string()) bad_type(key, "a string");
  out = v.get<std::string>();
}

void decode(const json& v, std::vector<std::uint64_t>& out, const std::string& key) {
  if (!v.is_array()) bad_type(key, "an array of non-negative integers");
  out.clear();
  for (const auto& e : v) out.push_back(decode_unsigned(e, key));
}

void decode(const json& v, std::vector<double>& out, const std::string& key) {
  if (!v.is_array()) bad_type(key, "an array of numbers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number()) bad_type(key, "an array of numbers");
    out.push_back(e.get<double>());
  }
}

void decode(const json& v, ExperimentKind& out, const std::string& key) {
  if (!v.is_string()) bad_type(key, "an experiment kind");
  out = parse_experiment_kind(v.get<std::string>());
}

void decode(const json& v, std::optional<fs::path>& out, const std::string& key) {
  if (!v.is_string()) bad_type(key, "a path string");
  const auto s = v.get<std::string>();
  out = s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

void decode(const json& v, std::vector<std::optional<std::size_t>>& out, const std::string& key) {
  if (!v.is_array()) bad_type(key, "an array of steps or \"free\"");
  out.clear();
  for (const auto& e : v) {
    if (e.is_string() && e.get<std::string>() == "free") out.emplace_back(std::nullopt);
    else out.emplace_back(decode_unsigned(e, key));
  }
}

void decode(const json& v, std::vector<Ablation>& out, const std::string& key) {
  if (!v.is_array()) bad_type(key, "an array of ablation names");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_string()) bad_type(key, "an array of ablation names");
    out.push_back(parse_ablation(e.get<std::string>()));
  }
}

// Calls f(key, field) for every configurable field.
template <typename Cfg, typename F>
void visit_fields(Cfg& c, F&& f) {
  f("seed", c.seed);
  f("workers", c.workers);
  f("out", c.out);
  f("ablation", c.ablation);

  f("data.dir", c.data.dir);
  f("data.source", c.data.source);
  f("data.interactions", c.data.interactions);
  f("data.visual", c.data.visual);
  f("data.textual", c.data.textual);
  f("data.k_core", c.data.k_core);
  f("data.split.train", c.data.ratios.train);
  f("data.split.validation", c.data.ratios.validation);
  f("data.split.test", c.data.ratios.test);

  f("synthetic.users", c.synthetic.num_users);
  f("synthetic.items", c.synthetic.num_items);
  f("synthetic.clusters", c.synthetic.num_clusters);
  f("synthetic.noise_rate", c.synthetic.noise_rate);
  f("synthetic.feature_dim", c.synthetic.feature_dim);
  f("synthetic.min_degree", c.synthetic.min_degree);
  f("synthetic.max_degree", c.synthetic.max_degree);
  f("synthetic.feature_jitter", c.synthetic.feature_jitter);
  f("synthetic.taste_strength", c.synthetic.taste_strength);
  f("synthetic.cluster_weight", c.synthetic.cluster_weight);

  f("model.d", c.model.d);
  f("model.d_forward", c.model.d_forward);
  f("model.d_svd", c.model.d_svd);
  f("model.pg_hidden", c.model.d_pg_hidden);
  f("model.leaky_slope", c.model.leaky_slope);
  f("model.text_first", c.model.text_first);

  f("conditioning.oversample", c.conditioning.svd.oversample);
  f("conditioning.power_iters", c.conditioning.svd.power_iters);
  f("conditioning.hops", c.conditioning.modality_hops);

  f("train.batch_size", c.train.batch_size);
  f("train.lr", c.train.adam.learning_rate);
  f("train.beta1", c.train.adam.beta1);
  f("train.beta2", c.train.adam.beta2);
  f("train.epsilon", c.train.adam.epsilon);
  f("train.max_epochs", c.train.max_epochs);
  f("train.patience", c.train.patience);
  f("train.eval_k", c.train.eval_k);
  f("train.history_depth", c.train.history_depth);
  f("train.checkpoint_every", c.train.checkpoint_every);

  f("diffusion.steps", c.diffusion.steps);
  f("diffusion.scale", c.diffusion.scale);
  f("diffusion.alpha_min", c.diffusion.alpha_min);

  f("soft.p", c.soft.p);
  f("soft.gamma", c.soft.gamma);

  f("eval.ks", c.eval.ks);
  f("eval.checkpoint", c.eval.checkpoint);
  f("eval.batch", c.eval.batch);

  f("experiment.kind", c.experiment.kind);
  f("experiment.seeds", c.experiment.seeds);
  f("experiment.forward_steps", c.experiment.forward_steps);
  f("experiment.noise_fractions", c.experiment.noise_fractions);
  f("experiment.noise_variants", c.experiment.noise_variants);
  f("experiment.ablations", c.experiment.ablations);
  f("experiment.checkpoint", c.experiment.checkpoint);
}

std::ofstream open_for_write(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

// Resolved config without keys that do not affect results.
json config_echo(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out");
  j.erase("workers");
  return j;
}

CNetConfig fitted_net(const RunConfig& cfg, const Dataset& data) {
  auto net = cfg.model_spec().net;
  net.num_users = data.split.train.num_users();
  net.num_items = data.split.train.num_items();
  net.visual_dim = data.visual.dim();
  net.text_dim = data.textual.dim();
  return net;
}

std::string describe_mismatch(const CNetConfig& expected, const CNetConfig& found) {
  json e = expected, f = found;
  std::string out;
  for (auto it = e.begin(); it != e.end(); ++it) {
    if (f[it.key()] != it.value()) {
      if (!out.empty()) out += ", ";
      out += it.key() + " " + f[it.key()].dump() + " vs config " + it.value().dump();
    }
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ config

RunConfig::RunConfig() {
  synthetic.num_users = 200;
  synthetic.num_items = 100;
  synthetic.num_clusters = 4;
  synthetic.noise_rate = 0.1;
  synthetic.feature_dim = 16;
  synthetic.min_degree = 6;
  synthetic.max_degree = 12;
  synthetic.taste_strength = 1.0;
  synthetic.cluster_weight = 0.5;
}

static void apply_workers(const RunConfig& cfg) { kernels::set_num_workers(cfg.workers); }

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (out.empty()) throw ConfigError("out must not be empty");
  parse_ablation(ablation);
  if (data.source != "synthetic" && data.source != "files") {
    throw ConfigError("data.source must be \"synthetic\" or \"files\"");
  }
  if (data.k_core == 0) throw ConfigError("data.k_core must be positive");
  if (synthetic.num_users == 0 || synthetic.num_items == 0 || synthetic.num_clusters == 0 ||
      synthetic.feature_dim == 0) {
    throw ConfigError("synthetic sizes must be positive");
  }
  if (synthetic.min_degree == 0 || synthetic.min_degree > synthetic.max_degree) {
    throw ConfigError("synthetic degrees must satisfy 0 < min_degree <= max_degree");
  }
  if (!(synthetic.noise_rate >= 0.0 && synthetic.noise_rate <= 1.0)) {
    throw ConfigError("synthetic.noise_rate must be in [0, 1]");
  }
  auto net = model;
  net.num_users = net.num_items = net.visual_dim = net.text_dim = 1;
  net.validate();
  train.validate();
  soft.validate();
  NoiseSchedule::build(diffusion.steps, diffusion.scale, diffusion.alpha_min);
  if (eval.ks.empty()) throw ConfigError("eval.ks must list at least one K");
  for (auto k : eval.ks)
    if (k == 0) throw ConfigError("eval.ks entries must be positive");
  if (eval.batch == 0) throw ConfigError("eval.batch must be positive");
  if (experiment.seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  spec.net = model;
  spec.train = train;
  spec.train.seed = seed;
  spec.soft = soft;
  spec.diffusion = diffusion;
  spec.conditioning = conditioning;
  spec.conditioning.svd.rank = model.d_svd;
  spec.conditioning.svd.seed = seed;
  return apply_ablation(spec, parse_ablation(ablation));
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  const RunConfig cfg;
  visit_fields(cfg, [&](const char* key, const auto&) { keys.emplace_back(key); });
  return keys;
}

void apply_json(RunConfig& cfg, const json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
  std::map<std::string, const json*> pending;
  for (auto it = flat.begin(); it != flat.end(); ++it) pending.emplace(it.key(), &it.value());
  visit_fields(cfg, [&](const char* key, auto& field) {
    auto it = pending.find(key);
    if (it == pending.end()) return;
    decode(*it->second, field, key);
    pending.erase(it);
  });
  if (!pending.empty()) {
    std::string names;
    for (const auto& [k, v] : pending) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key(s): " + names);
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j = json::object();
  visit_fields(cfg, [&](const char* key, const auto& field) { j[key] = encode(field); });
  return j;
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  if (text.empty() || text.back() == ',') throw ConfigError("bad K list '" + text + "'");
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    unsigned long long k = 0;
    try {
      k = std::stoull(part, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != part.size() || part.front() == '-' || k == 0) {
      throw ConfigError("bad K list '" + text + "'");
    }
    ks.push_back(k);
  }
  if (ks.empty()) throw ConfigError("empty K list");
  return ks;
}

void write_run_metadata(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", to_json(cfg));
  json manifest = json::object();
  if (fs::exists(dir / "manifest.json")) {
    std::ifstream in(dir / "manifest.json");
    manifest = json::parse(in, nullptr, false);
    if (!manifest.is_object()) manifest = json::object();
  }
  manifest["tool"] = "ldmrec";
  manifest["version"] = tool_version();
  manifest["command"] = command;
  write_json(dir / "manifest.json", manifest);
}

// ------------------------------------------------------------------ data

Dataset build_dataset(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.data.source == "synthetic") {
    auto spec = cfg.synthetic;
    spec.seed = seed;
    auto syn = synthesize(spec);
    spdlog::info("synthetic data: {} users, {} items, {} interactions", syn.interactions.num_users(),
                 syn.interactions.num_items(), syn.interactions.nnz());
    return {split(syn.interactions, cfg.data.ratios, seed), syn.visual, syn.textual};
  }
  if (cfg.data.interactions.empty() || cfg.data.visual.empty() || cfg.data.textual.empty()) {
    throw ConfigError("data.source \"files\" needs data.interactions, data.visual and data.textual");
  }
  for (const auto& p : {cfg.data.interactions, cfg.data.visual, cfg.data.textual}) {
    if (!fs::exists(p)) throw DataError("missing input file " + p);
  }
  auto raw = load_interactions(cfg.data.interactions);
  auto visual = load_features(cfg.data.visual);
  auto textual = load_features(cfg.data.textual);
  for (const auto* f : {&visual, &textual}) {
    if (f->num_items() != raw.num_items()) {
      throw DataError("feature file has " + std::to_string(f->num_items()) + " rows for " +
                      std::to_string(raw.num_items()) + " items");
    }
    if (!f->values.all_finite()) throw DataError("feature file contains non-finite values");
  }
  spdlog::info("raw data: {} users, {} items, {} interactions", raw.num_users(), raw.num_items(), raw.nnz());
  auto core = k_core_filter(raw, cfg.data.k_core);
  spdlog::info("{}-core: {} users, {} items, {} interactions", cfg.data.k_core, core.num_users(), core.num_items(),
               core.nnz());

  std::map<std::string, std::size_t> raw_index;
  for (std::size_t i = 0; i < raw.item_ids().size(); ++i) raw_index.emplace(raw.item_ids()[i], i);
  std::vector<std::size_t> rows;
  for (const auto& id : core.item_ids()) rows.push_back(raw_index.at(id));
  return {split(core, cfg.data.ratios, seed), select_rows(visual, rows), select_rows(textual, rows)};
}

void save_dataset(const fs::path& dir, const Dataset& data, std::uint64_t seed, const SplitRatios& ratios) {
  save_split(dir, data.split, seed, ratios);
  save_features_csv(dir / "visual.csv", data.visual);
  save_features_csv(dir / "textual.csv", data.textual);
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.split = load_split(dir);
  for (const char* f : {"visual.csv", "textual.csv"}) {
    if (!fs::exists(dir / f)) throw DataError("missing feature file " + (dir / f).string());
  }
  d.visual = load_features(dir / "visual.csv");
  d.textual = load_features(dir / "textual.csv");
  if (d.visual.num_items() != d.split.train.num_items() || d.textual.num_items() != d.split.train.num_items()) {
    throw DataError("feature rows do not match the item count in " + dir.string());
  }
  return d;
}

Dataset resolve_dataset(const RunConfig& cfg, std::uint64_t seed) {
  if (!cfg.data.dir.empty()) return load_dataset(cfg.data.dir);
  return build_dataset(cfg, seed);
}

// -------------------------------------------------------------- commands

void cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  apply_workers(cfg);
  const fs::path out = cfg.out;
  auto data = build_dataset(cfg, cfg.seed);
  save_dataset(out, data, cfg.seed, cfg.data.ratios);
  write_run_metadata(out, cfg, "prepare");
  spdlog::info("prepared dataset in {}", out.string());
}

void cmd_train(const RunConfig& cfg) {
  cfg.validate();
  apply_workers(cfg);
  const fs::path out = cfg.out;
  const auto data = resolve_dataset(cfg, cfg.seed);
  write_run_metadata(out, cfg, "train");
  spdlog::debug("resolved config: {}", to_json(cfg).dump());
  auto outcome = train_and_evaluate(data, cfg.model_spec(), cfg.seed, cfg.eval.ks,
                                    TrainOutputs{out / "train_log.jsonl", out});
  json test = json::object();
  for (std::size_t j = 0; j < outcome.test.ks.size(); ++j) {
    test["recall@" + std::to_string(outcome.test.ks[j])] = outcome.test.mean_recall[j];
    test["ndcg@" + std::to_string(outcome.test.ks[j])] = outcome.test.mean_ndcg[j];
  }
  write_json(out / "summary.json", json{{"best_epoch", outcome.train.best_epoch},
                                        {"epochs_run", outcome.train.epochs_run},
                                        {"early_stopped", outcome.train.early_stopped},
                                        {"best_val_recall@" + std::to_string(cfg.train.eval_k),
                                         outcome.train.best_metric},
                                        {"test", test}});
  spdlog::info("trained {} epochs, best epoch {} (validation recall@{} {:.4f})", outcome.train.epochs_run,
               outcome.train.best_epoch, cfg.train.eval_k, outcome.train.best_metric);
}

void cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  apply_workers(cfg);
  if (cfg.eval.checkpoint.empty()) throw ConfigError("eval needs a checkpoint (--checkpoint or eval.checkpoint)");
  const fs::path out = cfg.out;
  const auto data = resolve_dataset(cfg, cfg.seed);
  if (users_with_truth(data.split.test).empty()) throw DataError("test split has no interactions");
  CNet net = load_checkpoint(cfg.eval.checkpoint);
  const auto expected = fitted_net(cfg, data);
  if (!(net.config() == expected)) {
    throw ConfigError("checkpoint does not match the config: " + describe_mismatch(expected, net.config()));
  }
  const auto spec = cfg.model_spec();
  const auto cond = build_condition_signals(data.split.train, data.visual, data.textual, spec.conditioning);
  const auto users = users_with_truth(data.split.test);
  auto scores = infer(net, data.split.train, users, cond, cfg.eval.batch);
  auto rep = evaluate_scores(scores, users, data.split.train, data.split.test, cfg.eval.ks);
  rep.seed = cfg.seed;
  rep.config = config_echo(cfg);
  write_report(out, rep);
  write_run_metadata(out, cfg, "eval");
  for (std::size_t j = 0; j < rep.ks.size(); ++j) {
    spdlog::info("recall@{} {:.4f}  ndcg@{} {:.4f}", rep.ks[j], rep.mean_recall[j], rep.ks[j], rep.mean_ndcg[j]);
  }
}

void cmd_experiment(const RunConfig& cfg) {
  cfg.validate();
  apply_workers(cfg);
  const fs::path out = cfg.out;
  auto ec = cfg.experiment;
  ec.ks = cfg.eval.ks;
  std::optional<Dataset> fixed;
  if (!cfg.data.dir.empty()) fixed = load_dataset(cfg.data.dir);
  DatasetProvider provider = [&](std::uint64_t seed) { return fixed ? *fixed : build_dataset(cfg, seed); };
  write_run_metadata(out, cfg, "experiment");
  spdlog::info("experiment {} over {} seed(s)", experiment_kind_name(ec.kind), ec.seeds.size());
  auto rep = run_experiment(ec, provider, cfg.model_spec(), out);
  spdlog::info("wrote {} curve points to {}", rep.curve.size(), (out / "curve.csv").string());
}

}  // namespace ldmrec
