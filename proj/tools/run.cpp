#include "run.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "steproute/metrics.hpp"
#include "steproute/sweep.hpp"

namespace fs = std::filesystem;

namespace steproute::cli {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::SimSweep: return "sweep-thr";
    case Mode::TrainAgg: return "train-agg";
    case Mode::SolvePomdp: return "solve-pomdp";
    case Mode::Eval: return "eval";
    case Mode::Replay: return "replay";
    case Mode::FitObsModel: return "fit-obs";
  }
  return "?";
}

namespace {

constexpr const char* kVersion = "0.1.0";

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigError, path + ": " + what);
}

void check_keys(const nlohmann::json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) config_error(path, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) config_error(path + "." + key, "unknown field");
  }
}

const nlohmann::json& section(const nlohmann::json& root, const std::string& key, const std::set<std::string>& allowed) {
  if (!root.contains(key)) config_error(key, "required for this subcommand");
  check_keys(root[key], key, allowed);
  return root[key];
}

double number(const nlohmann::json& j, const std::string& key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) config_error(path + "." + key, "expected a number");
  return j[key].get<double>();
}

int integer(const nlohmann::json& j, const std::string& key, const std::string& path, int fallback, int min = 1) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) config_error(path + "." + key, "expected an integer");
  const auto v = j[key].get<std::int64_t>();
  if (v < min || v > 1'000'000'000) config_error(path + "." + key, "must be >= " + std::to_string(min));
  return static_cast<int>(v);
}

bool boolean(const nlohmann::json& j, const std::string& key, const std::string& path, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) config_error(path + "." + key, "expected a boolean");
  return j[key].get<bool>();
}

std::optional<std::string> string_opt(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) return std::nullopt;
  if (!j[key].is_string()) config_error(path + "." + key, "expected a string");
  return j[key].get<std::string>();
}

std::vector<double> number_list(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) config_error(path + "." + key, "required");
  if (!j[key].is_array() || j[key].empty()) config_error(path + "." + key, "expected a nonempty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j[key].size(); ++i) {
    if (!j[key][i].is_number()) config_error(path + "." + key + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(j[key][i].get<double>());
  }
  return out;
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) config_error(path + "." + key, "required");
  if (!j[key].is_array() || j[key].empty()) config_error(path + "." + key, "expected a nonempty array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j[key].size(); ++i) {
    if (!j[key][i].is_string()) config_error(path + "." + key + "[" + std::to_string(i) + "]", "expected a string");
    out.push_back(j[key][i].get<std::string>());
  }
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Writes into a staging directory; commit() swaps it into place.
class Artifacts {
 public:
  explicit Artifacts(std::string out) : out_(std::move(out)), staging_(out_ + ".staging") {
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~Artifacts() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream f(fs::path(staging_) / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + name);
    f << bytes;
    if (!f) throw Error(ErrorCode::IoError, "short write on " + name);
    files_[name] = {{"bytes", bytes.size()}, {"fnv1a64", hex(fnv1a(bytes))}};
  }
  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  void commit(const nlohmann::json& manifest_base) {
    nlohmann::json manifest = manifest_base;
    manifest["files"] = files_;
    write_json("manifest.json", manifest);
    fs::path out(out_);
    if (fs::exists(out)) fs::remove_all(out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::rename(staging_, out);
    committed_ = true;
  }

 private:
  std::string out_;
  std::string staging_;
  nlohmann::json files_ = nlohmann::json::object();
  bool committed_ = false;
};

struct Context {
  const RunConfig& run;
  nlohmann::json effective;
  std::uint64_t seed = 0;
  int episodes = 1;
  unsigned threads = 0;
  EnvConfig env;
  IbcRegioning regioning = IbcRegioning::Accuracy;

  std::string resolve(const std::string& p) const {
    return fs::path(p).is_absolute() ? p : (fs::path(run.config_dir) / p).string();
  }
  std::uint64_t stream(const char* name) const { return derive_seed(seed, name); }
};

std::string curve_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  write_curve_csv(os, points);
  return os.str();
}

void emit_curve(Artifacts& art, const Context& ctx, const TradeoffCurve& curve, const std::vector<SweepPoint>& rows) {
  art.write("curve.csv", curve_csv(rows));
  art.write_json("endpoints.json", endpoints_to_json(curve));
  if (curve.r_strong > curve.r_weak && curve.mean_strong_only_tokens > 0) {
    art.write_json("report.json", metric_report(curve, ctx.regioning));
  } else {
    std::cerr << "warning: degenerate endpoints, report.json skipped\n";
  }
}

// Rows in ladder order (the curve itself is cost-sorted).
std::vector<SweepPoint> ladder_rows(const SweepResult& s) {
  std::vector<SweepPoint> rows;
  for (std::size_t k = 0; k < s.controls.size(); ++k) rows.push_back(summarize(s.controls[k], s.outcomes[k], s.endpoints));
  return rows;
}

std::vector<TraceState> load_corpus(const std::string& path) { return replay_load(path); }

ObservationModel fitted_or_loaded_model(const nlohmann::json& j, const std::string& path, const Context& ctx,
                                        Artifacts& art) {
  if (auto p = string_opt(j, "observation_model", path)) {
    std::ifstream in(ctx.resolve(*p));
    if (!in) throw Error(ErrorCode::IoError, "cannot open observation model '" + *p + "'");
    return observation_model_from_json(nlohmann::json::parse(in));
  }
  const int fit_episodes = integer(j, "fit_episodes", path, 2000);
  const double regen = number(j, "fit_regen_prob", path, 0.3);
  if (!(regen >= 0 && regen <= 1)) config_error(path + ".fit_regen_prob", "must lie in [0,1]");
  const auto rows = collect_labeled_observations(ctx.env, fit_episodes, regen, ctx.stream("obs-fit"));
  auto model = fit_observation_model(rows);
  art.write_json("observation_model.json", to_json(model));
  return model;
}

PomdpSweepSettings pomdp_settings(const nlohmann::json& j, const std::string& path, const Context& ctx, Artifacts& art) {
  PomdpSweepSettings s;
  s.model = std::make_shared<ObservationModel>(fitted_or_loaded_model(j, path, ctx, art));
  if (j.contains("trigger")) s.band = trigger_band_from_json(j["trigger"], path + ".trigger");
  s.lookup_resolution = integer(j, "lookup_resolution", path, 50, 2);
  s.termination_prob = number(j, "termination_prob", path, s.termination_prob);
  if (!(s.termination_prob > 0 && s.termination_prob <= 1)) config_error(path + ".termination_prob", "must lie in (0,1]");
  s.solver.observation_cells = integer(j, "observation_cells", path, 8);
  s.solver.solver.max_beliefs = integer(j, "max_beliefs", path, s.solver.solver.max_beliefs);
  return s;
}

std::string index_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.%s", stem, i, ext);
  return buf;
}

void mode_sweep_thr(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "threshold", {"ladder", "takeover"});
  const auto ladder = number_list(j, "ladder", "threshold");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i] >= 0 && ladder[i] <= 1)) config_error("threshold.ladder[" + std::to_string(i) + "]", "must lie in [0,1]");
  }
  const bool takeover = boolean(j, "takeover", "threshold", false);
  const auto s = sweep_threshold(ctx.env, ladder, ctx.episodes, ctx.stream("env"), takeover, ctx.threads);
  emit_curve(art, ctx, s.curve, ladder_rows(s));
}

void mode_train_agg(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "agg", {"lambdas", "ppo"});
  const auto lambdas = number_list(j, "lambdas", "agg");
  AggSweepSettings settings;
  if (j.contains("ppo")) settings.ppo = ppo_config_from_json(j["ppo"], "agg.ppo");
  settings.train_seed = ctx.stream("policy-init");
  std::vector<PolicyNet> nets;
  const auto s = sweep_lambda_agg(ctx.env, lambdas, settings, ctx.episodes, ctx.stream("env"), ctx.threads, &nets);
  for (std::size_t i = 0; i < nets.size(); ++i) {
    art.write_json(index_name("checkpoint", i, "json"), checkpoint_to_json(nets[i], settings.ppo.scaling));
  }
  emit_curve(art, ctx, s.curve, ladder_rows(s));
}

void mode_solve_pomdp(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "pomdp",
                          {"lambdas", "observation_model", "fit_episodes", "fit_regen_prob", "trigger",
                           "lookup_resolution", "termination_prob", "observation_cells", "max_beliefs"});
  const auto lambdas = number_list(j, "lambdas", "pomdp");
  const auto settings = pomdp_settings(j, "pomdp", ctx, art);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0)) config_error("pomdp.lambdas[" + std::to_string(i) + "]", "must be >= 0");
    const auto planner = make_planner(ctx.env, lambdas[i], settings);
    art.write_json(index_name("lookup", i, "json"), to_json(*planner.cache, planner.spec));
  }
  const auto s = sweep_lambda_pomdp(ctx.env, lambdas, settings, ctx.episodes, ctx.stream("env"), ctx.threads);
  emit_curve(art, ctx, s.curve, ladder_rows(s));
}

void mode_fit_obs(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "fit_obs", {"corpus", "episodes", "regen_prob", "min_samples", "bandwidth_floor"});
  KdeOptions opts;
  opts.min_samples = integer(j, "min_samples", "fit_obs", opts.min_samples);
  opts.bandwidth_floor = number(j, "bandwidth_floor", "fit_obs", opts.bandwidth_floor);
  if (!(opts.bandwidth_floor > 0)) config_error("fit_obs.bandwidth_floor", "must be positive");
  std::vector<LabeledObservation> rows;
  if (auto corpus = string_opt(j, "corpus", "fit_obs")) {
    const auto traces = load_corpus(ctx.resolve(*corpus));
    rows = labeled_observations_from_traces(traces);
    const auto [pw, ps] = estimate_accuracies(traces);
    art.write_json("accuracies.json", {{"p_weak", pw}, {"p_strong", ps}});
  } else {
    const double regen = number(j, "regen_prob", "fit_obs", 0.3);
    if (!(regen >= 0 && regen <= 1)) config_error("fit_obs.regen_prob", "must lie in [0,1]");
    rows = collect_labeled_observations(ctx.env, integer(j, "episodes", "fit_obs", 2000), regen, ctx.stream("obs-fit"));
  }
  art.write_json("observation_model.json", to_json(fit_observation_model(rows, opts)));
}

std::unique_ptr<Router> threshold_factory_router(double k) { return std::make_unique<ThresholdRouter>(ThresholdPolicy{k, false}); }

void mode_eval(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "eval",
                          {"corpus", "policy", "controls", "checkpoints", "lookups", "observation_model", "trigger",
                           "termination_prob"});
  if (auto corpus = string_opt(j, "corpus", "eval")) {
    ctx.env = fit_env_from_traces(load_corpus(ctx.resolve(*corpus)));
    art.write_json("env.json", to_json(ctx.env));
  }
  const auto policy = string_opt(j, "policy", "eval").value_or("");
  SweepResult s;
  const std::uint64_t env_seed = ctx.stream("env");
  s.endpoints = measure_endpoints(ctx.env, ctx.episodes, env_seed, ctx.threads);
  if (policy == "threshold") {
    s.controls = number_list(j, "controls", "eval");
    for (double k : s.controls) {
      if (!(k >= 0 && k <= 1)) config_error("eval.controls", "thresholds must lie in [0,1]");
      s.outcomes.push_back(evaluate_router([k] { return threshold_factory_router(k); }, ctx.env, ctx.episodes, env_seed, ctx.threads));
    }
  } else if (policy == "agg") {
    const auto paths = string_list(j, "checkpoints", "eval");
    std::vector<double> controls(paths.size());
    if (j.contains("controls")) controls = number_list(j, "controls", "eval");
    if (controls.size() != paths.size()) config_error("eval.controls", "one control per checkpoint");
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto [net, scaling] = load_checkpoint(ctx.resolve(paths[i]));
      const PolicyNet* n = &net;
      const FeatureScaling sc = scaling;
      s.controls.push_back(controls[i]);
      s.outcomes.push_back(evaluate_router([n, sc] { return std::make_unique<AggRouter>(*n, sc); }, ctx.env, ctx.episodes, env_seed, ctx.threads));
    }
  } else if (policy == "pomdp") {
    const auto paths = string_list(j, "lookups", "eval");
    const auto model_path = string_opt(j, "observation_model", "eval");
    if (!model_path) config_error("eval.observation_model", "required for pomdp policies");
    std::ifstream min(ctx.resolve(*model_path));
    if (!min) throw Error(ErrorCode::IoError, "cannot open observation model '" + *model_path + "'");
    const auto model = observation_model_from_json(nlohmann::json::parse(min));
    TriggerBand band;
    if (j.contains("trigger")) band = trigger_band_from_json(j["trigger"], "eval.trigger");
    for (const auto& p : paths) {
      std::ifstream lin(ctx.resolve(p));
      if (!lin) throw Error(ErrorCode::IoError, "cannot open lookup '" + p + "'");
      const auto lj = nlohmann::json::parse(lin);
      PomdpPlanner planner;
      planner.spec = pomdp_spec_from_json(lj.at("spec"), p + ".spec");
      planner.likelihood = std::make_shared<TabulatedObservation>(model);
      planner.cache = lookup_table_from_json(lj);
      const PomdpPlanner* pl = &planner;
      s.controls.push_back(planner.spec.lambda);
      s.outcomes.push_back(evaluate_router([pl, band] { return std::make_unique<PomdpRouter>(*pl, band); }, ctx.env, ctx.episodes, env_seed, ctx.threads));
    }
  } else {
    config_error("eval.policy", "expected 'threshold', 'agg' or 'pomdp'");
  }
  s.curve = assemble_curve(s);
  emit_curve(art, ctx, s.curve, ladder_rows(s));
}

void mode_replay(Context& ctx, Artifacts& art) {
  const auto& j = section(ctx.run.config, "replay", {"corpus", "policy", "k", "checkpoint"});
  const auto corpus = string_opt(j, "corpus", "replay");
  if (!corpus) config_error("replay.corpus", "required");
  const auto traces = load_corpus(ctx.resolve(*corpus));
  const auto policy = string_opt(j, "policy", "replay").value_or("threshold");
  std::optional<std::pair<PolicyNet, FeatureScaling>> net;
  double k = 0.5;
  if (policy == "threshold") {
    k = number(j, "k", "replay", k);
    if (!(k >= 0 && k <= 1)) config_error("replay.k", "must lie in [0,1]");
  } else if (policy == "agg") {
    const auto p = string_opt(j, "checkpoint", "replay");
    if (!p) config_error("replay.checkpoint", "required for agg");
    net = load_checkpoint(ctx.resolve(*p));
  } else {
    config_error("replay.policy", "expected 'threshold' or 'agg'");
  }
  std::ostringstream decisions;
  std::int64_t steps = 0, regens = 0;
  std::vector<ScoredOutcome> outcomes;
  for (const auto& trace : traces) {
    std::unique_ptr<Router> router;
    if (net) {
      router = std::make_unique<AggRouter>(net->first, net->second);
    } else {
      router = std::make_unique<ThresholdRouter>(ThresholdPolicy{k, false});
    }
    TraceState prefix(trace.query_id(), trace.max_steps());
    for (const auto& step : trace.steps()) {
      const auto feats = candidate_features(prefix, step);
      const auto action = router->decide(feats, prefix);
      // The recorded step stands in for whatever the chosen generator would produce.
      if (action == RoutingAction::Regenerate) router->on_regenerated(feats);
      decisions << nlohmann::json{{"query_id", trace.query_id()},
                                  {"step", feats.step_index},
                                  {"current_score", feats.current_score},
                                  {"min_prev_score", feats.min_prev_score},
                                  {"action", to_string(action)}}
                       .dump()
                << '\n';
      ++steps;
      regens += action == RoutingAction::Regenerate;
      prefix = append_step(prefix, step);
    }
    bool labeled = !trace.steps().empty();
    for (const auto& st : trace.steps()) labeled = labeled && st.truth.has_value();
    if (labeled) outcomes.push_back({min_step_score(trace), latent_classes(trace).back() == LatentClass::S0});
  }
  nlohmann::json summary{{"traces", traces.size()},
                         {"steps", steps},
                         {"regenerate_fraction", steps ? static_cast<double>(regens) / static_cast<double>(steps) : 0.0}};
  try {
    summary["min_score_auc"] = outcomes.size() == traces.size() ? nlohmann::json(min_score_auc(outcomes)) : nlohmann::json(nullptr);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingleClass) throw;
    summary["min_score_auc"] = nullptr;
  }
  art.write("decisions.jsonl", decisions.str());
  art.write_json("summary.json", summary);
}

}  // namespace

int run(const RunConfig& rc) {
  try {
    check_keys(rc.config, "config",
               {"env", "seed", "episodes", "threads", "ibc_regioning", "threshold", "agg", "pomdp", "eval", "replay",
                "fit_obs"});
    Context ctx{rc, rc.config};
    if (rc.seed) ctx.effective["seed"] = *rc.seed;
    if (rc.episodes) ctx.effective["episodes"] = *rc.episodes;
    const auto& eff = ctx.effective;
    if (eff.contains("seed") && !eff["seed"].is_number_unsigned() && !eff["seed"].is_number_integer()) {
      config_error("seed", "expected a nonnegative integer");
    }
    ctx.seed = eff.value("seed", std::uint64_t{0});
    ctx.episodes = integer(eff, "episodes", "config", 1000);
    ctx.threads = static_cast<unsigned>(integer(eff, "threads", "config", 0, 0));
    const auto regioning = string_opt(eff, "ibc_regioning", "config").value_or("accuracy");
    if (regioning == "cost") {
      ctx.regioning = IbcRegioning::Cost;
    } else if (regioning != "accuracy") {
      config_error("ibc_regioning", "expected 'accuracy' or 'cost'");
    }
    ctx.env = eff.contains("env") ? env_from_json(eff["env"], "env") : EnvConfig{};
    if (rc.out.empty()) config_error("--out", "required");

    Artifacts art(rc.out);
    switch (rc.mode) {
      case Mode::SimSweep: mode_sweep_thr(ctx, art); break;
      case Mode::TrainAgg: mode_train_agg(ctx, art); break;
      case Mode::SolvePomdp: mode_solve_pomdp(ctx, art); break;
      case Mode::FitObsModel: mode_fit_obs(ctx, art); break;
      case Mode::Eval: mode_eval(ctx, art); break;
      case Mode::Replay: mode_replay(ctx, art); break;
    }
    nlohmann::json effective = ctx.effective;
    effective.erase("threads");  // does not affect outputs
    art.commit({{"tool", "steproute"},
                {"version", kVersion},
                {"mode", mode_name(rc.mode)},
                {"config", effective},
                {"config_hash", hex(fnv1a(effective.dump()))},
                {"seed", ctx.seed},
                {"episodes", ctx.episodes},
                {"substreams", {"env", "policy-init", "rollout", "obs-fit"}}});
    return 0;
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.detail() << '\n';
    return e.code() == ErrorCode::ConfigError ? 1 : 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "json: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace steproute::cli
