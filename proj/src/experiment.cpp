#include "ldmrec/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "ldmrec/errors.hpp"

namespace ldmrec {

using json = nlohmann::json;

Ablation parse_ablation(const std::string& name) {
  if (name == "none" || name == "full") return Ablation::none;
  if (name == "wo_cg") return Ablation::wo_cg;
  if (name == "wo_pg") return Ablation::wo_pg;
  if (name == "wo_sr") return Ablation::wo_sr;
  throw ConfigError("unknown ablation '" + name + "' (expected none, wo_cg, wo_pg or wo_sr)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::none: return "full";
    case Ablation::wo_cg: return "wo_cg";
    case Ablation::wo_pg: return "wo_pg";
    case Ablation::wo_sr: return "wo_sr";
  }
  return "full";
}

ModelSpec apply_ablation(ModelSpec spec, Ablation a) {
  spec.ablation = a;
  switch (a) {
    case Ablation::none: break;
    case Ablation::wo_cg: spec.net.disable_cg = true; break;
    case Ablation::wo_pg: spec.net.disable_pg = true; break;
    case Ablation::wo_sr: spec.soft = {0.0, 0.0}; break;
  }
  return spec;
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "forward_sweep") return ExperimentKind::forward_sweep;
  if (name == "noise_robustness") return ExperimentKind::noise_robustness;
  if (name == "ablation") return ExperimentKind::ablation;
  if (name == "efficiency") return ExperimentKind::efficiency;
  throw ConfigError("unknown experiment kind '" + name + "'");
}

std::string experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::forward_sweep: return "forward_sweep";
    case ExperimentKind::noise_robustness: return "noise_robustness";
    case ExperimentKind::ablation: return "ablation";
    case ExperimentKind::efficiency: return "efficiency";
  }
  return "forward_sweep";
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

RunOutcome train_and_evaluate(const Dataset& data, ModelSpec spec, std::uint64_t seed,
                              std::span<const std::size_t> ks, const TrainOutputs& outputs) {
  spec = apply_ablation(spec, spec.ablation);
  const auto& tr = data.split.train;
  spec.net.num_users = tr.num_users();
  spec.net.num_items = tr.num_items();
  spec.net.visual_dim = data.visual.dim();
  spec.net.text_dim = data.textual.dim();
  spec.conditioning.svd.rank = spec.net.d_svd;
  spec.conditioning.svd.seed = seed;
  spec.train.seed = seed;

  RunOutcome out;
  out.cond = build_condition_signals(tr, data.visual, data.textual, spec.conditioning);
  const auto schedule = NoiseSchedule::build(spec.diffusion.steps, spec.diffusion.scale, spec.diffusion.alpha_min);
  out.train = train(data.split, out.cond, CNet::init(spec.net, seed), schedule, spec.soft, spec.train, outputs);
  out.test = evaluate(out.train.best, tr, data.split.test, out.cond, ks);
  out.test.seed = seed;
  return out;
}

const CurvePoint& ExperimentReport::point(const std::string& x, const std::string& metric) const {
  for (const auto& p : curve)
    if (p.x == x && p.metric == metric) return p;
  throw IndexError("no curve point for x=" + x + ", metric=" + metric);
}

namespace {

// Collects per-seed samples for (x, metric) keys in first-seen order.
class Aggregator {
 public:
  void add(const std::string& x, const std::string& metric, double value) {
    auto key = std::make_pair(x, metric);
    auto it = index_.find(key);
    if (it == index_.end()) {
      it = index_.emplace(key, keys_.size()).first;
      keys_.push_back(key);
      samples_.emplace_back();
    }
    samples_[it->second].push_back(value);
  }

  void add_report(const std::string& x, const std::string& prefix, const EvalReport& rep) {
    for (std::size_t j = 0; j < rep.ks.size(); ++j) {
      add(x, prefix + "recall@" + std::to_string(rep.ks[j]), rep.mean_recall[j]);
      add(x, prefix + "ndcg@" + std::to_string(rep.ks[j]), rep.mean_ndcg[j]);
    }
  }

  std::vector<CurvePoint> curve() const {
    std::vector<CurvePoint> out;
    for (std::size_t k = 0; k < keys_.size(); ++k) {
      const auto& s = samples_[k];
      CurvePoint p{keys_[k].first, keys_[k].second, 0.0, 0.0, s.size()};
      for (double v : s) p.mean += v;
      p.mean /= static_cast<double>(s.size());
      if (s.size() > 1) {
        double ss = 0.0;
        for (double v : s) ss += (v - p.mean) * (v - p.mean);
        p.stddev = std::sqrt(ss / static_cast<double>(s.size() - 1));
      }
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> keys_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
  std::vector<std::vector<double>> samples_;
};

json metrics_json(const EvalReport& rep) {
  json m = json::object();
  for (std::size_t j = 0; j < rep.ks.size(); ++j) {
    m["recall@" + std::to_string(rep.ks[j])] = rep.mean_recall[j];
    m["ndcg@" + std::to_string(rep.ks[j])] = rep.mean_ndcg[j];
  }
  return m;
}

json run_record(const std::string& x, std::uint64_t seed, const RunOutcome& o) {
  return json{{"x", x},
              {"seed", seed},
              {"best_epoch", o.train.best_epoch},
              {"epochs_run", o.train.epochs_run},
              {"early_stopped", o.train.early_stopped},
              {"best_val_metric", o.train.best_metric},
              {"test", metrics_json(o.test)}};
}

// A trained model for forward_sweep / efficiency: from a checkpoint when one
// is configured, otherwise trained on the spot.
struct Trained {
  CNet net;
  ConditionSignals cond;
  std::optional<RunOutcome> outcome;
};

Trained obtain_model(const ExperimentConfig& cfg, const Dataset& data, const ModelSpec& model, std::uint64_t seed,
                     std::span<const std::size_t> ks) {
  if (!cfg.checkpoint) {
    auto o = train_and_evaluate(data, model, seed, ks);
    Trained t{o.train.best, o.cond, std::move(o)};
    return t;
  }
  if (!std::filesystem::exists(*cfg.checkpoint)) throw ConfigError("missing checkpoint " + cfg.checkpoint->string());
  CNet net = load_checkpoint(*cfg.checkpoint);
  const auto& c = net.config();
  if (c.num_users != data.split.train.num_users() || c.num_items != data.split.train.num_items()) {
    throw ConfigError("checkpoint dimensions do not match the dataset");
  }
  auto opts = model.conditioning;
  opts.svd.rank = c.d_svd;
  opts.svd.seed = model.train.seed;
  auto cond = build_condition_signals(data.split.train, data.visual, data.textual, opts);
  return Trained{std::move(net), std::move(cond), std::nullopt};
}

std::string step_label(const std::optional<std::size_t>& t) { return t ? std::to_string(*t) : "free"; }

template <typename Fn>
double seconds(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  std::vector<std::string> xs, metrics;
  std::map<std::pair<std::string, std::string>, const CurvePoint*> cell;
  std::map<std::string, std::size_t> seeds;
  for (const auto& p : curve) {
    if (std::find(xs.begin(), xs.end(), p.x) == xs.end()) xs.push_back(p.x);
    if (std::find(metrics.begin(), metrics.end(), p.metric) == metrics.end()) metrics.push_back(p.metric);
    cell[{p.x, p.metric}] = &p;
    seeds[p.x] = std::max(seeds[p.x], p.seeds);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "x,seeds";
  for (const auto& m : metrics) out << ',' << m << ',' << m << "_std";
  out << '\n';
  out.precision(17);
  for (const auto& x : xs) {
    out << x << ',' << seeds[x];
    for (const auto& m : metrics) {
      auto it = cell.find({x, m});
      if (it == cell.end()) out << ",,";
      else out << ',' << it->second->mean << ',' << it->second->stddev;
    }
    out << '\n';
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const DatasetProvider& provider, const ModelSpec& model,
                                const std::optional<std::filesystem::path>& out_dir) {
  if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (cfg.ks.empty()) throw ConfigError("experiment needs at least one K");
  ExperimentReport rep{cfg.kind, {}, json::object(), {}};
  Aggregator agg;
  const std::span<const std::size_t> ks(cfg.ks);
  const auto schedule = NoiseSchedule::build(model.diffusion.steps, model.diffusion.scale, model.diffusion.alpha_min);

  switch (cfg.kind) {
    case ExperimentKind::forward_sweep: {
      if (cfg.forward_steps.empty()) throw ConfigError("forward_sweep needs at least one step");
      for (auto seed : cfg.seeds) {
        const Dataset data = provider(seed);
        auto m = obtain_model(cfg, data, model, seed, ks);
        const auto users = users_with_truth(data.split.test);
        for (const auto& t : cfg.forward_steps) {
          DenseMatrix scores;
          if (t) {
            if (*t < 1 || *t > schedule.steps()) throw ConfigError("forward step outside 1..T");
            Rng rng(seed * 1000003ull + *t);
            scores = infer_with_forward_steps(m.net, data.split.train, users, *t, schedule, m.cond, rng);
          } else {
            scores = infer(m.net, data.split.train, users, m.cond);
          }
          auto r = evaluate_scores(scores, users, data.split.train, data.split.test, ks);
          agg.add_report(step_label(t), "", r);
          rep.runs.push_back(json{{"x", step_label(t)}, {"seed", seed}, {"test", metrics_json(r)}});
        }
      }
      break;
    }
    case ExperimentKind::noise_robustness: {
      if (cfg.noise_fractions.empty()) throw ConfigError("noise_robustness needs at least one fraction");
      for (auto seed : cfg.seeds) {
        const Dataset base = provider(seed);
        for (auto variant : cfg.noise_variants) {
          for (double f : cfg.noise_fractions) {
            Dataset data = base;
            data.split.train = inject_noise(base.split.train, f, seed);
            auto spec = model;
            spec.ablation = variant;
            auto o = train_and_evaluate(data, spec, seed, ks);
            const std::string prefix = ablation_name(variant) + "/";
            agg.add_report(format_number(f), prefix, o.test);
            auto rec = run_record(format_number(f), seed, o);
            rec["variant"] = ablation_name(variant);
            rep.runs.push_back(std::move(rec));
          }
        }
      }
      break;
    }
    case ExperimentKind::ablation: {
      if (cfg.ablations.empty()) throw ConfigError("ablation needs at least one variant");
      for (auto seed : cfg.seeds) {
        const Dataset data = provider(seed);
        for (auto a : cfg.ablations) {
          auto spec = model;
          spec.ablation = a;
          auto o = train_and_evaluate(data, spec, seed, ks);
          agg.add_report(ablation_name(a), "", o.test);
          rep.runs.push_back(run_record(ablation_name(a), seed, o));
        }
      }
      break;
    }
    case ExperimentKind::efficiency: {
      for (auto seed : cfg.seeds) {
        const Dataset data = provider(seed);
        auto m = obtain_model(cfg, data, model, seed, ks);
        const auto users = users_with_truth(data.split.test);
        const double n = static_cast<double>(users.size());

        DenseMatrix free_scores, chain_scores;
        m.net.reset_evaluations();
        const double free_s = seconds([&] { free_scores = infer(m.net, data.split.train, users, m.cond); });
        const double free_evals = static_cast<double>(m.net.evaluations()) / n;
        m.net.reset_evaluations();
        Rng rng(seed);
        const double chain_s =
            seconds([&] { chain_scores = reverse_chain(m.net, data.split.train, users, schedule, m.cond, rng); });
        const double chain_evals = static_cast<double>(m.net.evaluations()) / n;

        agg.add("forward_free", "evals_per_user", free_evals);
        agg.add("forward_free", "infer_seconds", free_s);
        agg.add_report("forward_free", "", evaluate_scores(free_scores, users, data.split.train, data.split.test, ks));
        agg.add("t_step_chain", "evals_per_user", chain_evals);
        agg.add("t_step_chain", "infer_seconds", chain_s);
        agg.add_report("t_step_chain", "",
                       evaluate_scores(chain_scores, users, data.split.train, data.split.test, ks));
        json rec{{"seed", seed},
                 {"users", users.size()},
                 {"forward_free", {{"evals_per_user", free_evals}, {"infer_seconds", free_s}}},
                 {"t_step_chain", {{"evals_per_user", chain_evals}, {"infer_seconds", chain_s}}}};
        if (m.outcome) {
          double epoch_s = 0.0;
          for (const auto& e : m.outcome->train.log) epoch_s += e.wall_seconds;
          epoch_s /= static_cast<double>(std::max<std::size_t>(1, m.outcome->train.log.size()));
          agg.add("forward_free", "train_epoch_seconds", epoch_s);
          rec["train_epoch_seconds"] = epoch_s;
        }
        rep.runs.push_back(std::move(rec));
      }
      break;
    }
  }

  rep.curve = agg.curve();
  json points = json::array();
  for (const auto& p : rep.curve) {
    points.push_back({{"x", p.x}, {"metric", p.metric}, {"mean", p.mean}, {"stddev", p.stddev}, {"seeds", p.seeds}});
  }
  rep.summary = json{{"kind", experiment_kind_name(cfg.kind)}, {"seeds", cfg.seeds}, {"points", points}};

  if (cfg.kind == ExperimentKind::noise_robustness) {
    const std::string metric = "recall@" + std::to_string(*std::max_element(cfg.ks.begin(), cfg.ks.end()));
    json deg = json::object();
    for (auto v : cfg.noise_variants) {
      const std::string key = ablation_name(v) + "/" + metric;
      const double base = rep.point(format_number(cfg.noise_fractions.front()), key).mean;
      json per = json::object();
      for (double f : cfg.noise_fractions) {
        per[format_number(f)] = base > 0.0 ? (base - rep.point(format_number(f), key).mean) / base : 0.0;
      }
      deg[ablation_name(v)] = per;
    }
    rep.summary["relative_degradation"] = deg;
    rep.summary["degradation_metric"] = metric;
  }
  if (cfg.kind == ExperimentKind::efficiency) {
    const double free_s = rep.point("forward_free", "infer_seconds").mean;
    const double chain_s = rep.point("t_step_chain", "infer_seconds").mean;
    rep.summary["speedup"] = free_s > 0.0 ? chain_s / free_s : 0.0;
    rep.summary["evals_ratio"] = rep.point("t_step_chain", "evals_per_user").mean /
                                 rep.point("forward_free", "evals_per_user").mean;
    rep.summary["t_step_chain_note"] =
        "reference loop: predict x0, re-noise to t-1, repeat from T; a cost baseline, not the model's inference";
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_curve_csv(*out_dir / "curve.csv", rep.curve);
    std::ofstream s(*out_dir / "summary.json");
    s << rep.summary.dump(2) << '\n';
    std::ofstream r(*out_dir / "runs.jsonl");
    for (const auto& rec : rep.runs) r << rec.dump() << '\n';
    if (!s || !r) throw DataError("cannot write experiment outputs to " + out_dir->string());
  }
  return rep;
}

}  // namespace ldmrec
