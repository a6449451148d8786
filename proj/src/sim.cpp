#include "steproute/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace steproute {

const char* to_string(LatentClass c) {
  switch (c) {
    case LatentClass::S0: return "S0";
    case LatentClass::S1: return "S1";
    case LatentClass::S2: return "S2";
    case LatentClass::Terminal: return "Terminal";
  }
  return "?";
}

double NoiseSpec::apply(double score, Rng& rng) const {
  switch (mode) {
    case Mode::None: break;
    case Mode::ExtraVariance: {
      std::normal_distribution<double> n(0.0, param);
      score += n(rng);
      break;
    }
    case Mode::Miscalibration: score += param; break;
  }
  return std::clamp(score, 0.0, 1.0);
}

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, field + ": " + what);
}

void require_token_dist(const Distribution& d, const std::string& field) {
  require(d.is_integer_valued() && d.support_lo() >= 1.0, field, "support must be integers >= 1");
}

void require_score_dist(const Distribution& d, const std::string& field) {
  require(d.kind == Distribution::Kind::Beta || d.kind == Distribution::Kind::Point, field,
          "score distributions must be beta or point");
  require(d.support_lo() >= 0.0 && d.support_hi() <= 1.0, field, "support must lie in [0,1]");
}

}  // namespace

void EnvConfig::validate() const {
  require(p_weak >= 0.0 && p_weak <= 1.0, "p_weak", "must lie in [0,1]");
  require(p_strong >= 0.0 && p_strong <= 1.0, "p_strong", "must lie in [0,1]");
  require(max_steps >= 1, "max_steps", "must be positive");
  require(horizon.is_integer_valued() && horizon.support_lo() >= 1.0, "horizon", "support must be integers >= 1");
  require_token_dist(weak_tokens, "weak_token_dist");
  require_token_dist(strong_tokens, "strong_token_dist");
  require_score_dist(emission.correct, "score_emission.correct");
  require_score_dist(emission.incorrect, "score_emission.incorrect");
  require(noise.param >= 0.0 || noise.mode == NoiseSpec::Mode::Miscalibration, "noise", "scale must be nonnegative");
}

EnvConfig env_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, path + ": expected an object");
  EnvConfig cfg;
  auto number = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw Error(ErrorCode::ConfigError, path + "." + key + ": expected a number");
    out = j[key].get<double>();
  };
  number("p_weak", cfg.p_weak);
  number("p_strong", cfg.p_strong);
  if (j.contains("max_steps")) {
    if (!j["max_steps"].is_number_integer()) throw Error(ErrorCode::ConfigError, path + ".max_steps: expected an integer");
    cfg.max_steps = j["max_steps"].get<int>();
  }
  if (j.contains("horizon_dist")) cfg.horizon = distribution_from_json(j["horizon_dist"], path + ".horizon_dist");
  if (j.contains("weak_token_dist")) cfg.weak_tokens = distribution_from_json(j["weak_token_dist"], path + ".weak_token_dist");
  if (j.contains("strong_token_dist")) {
    cfg.strong_tokens = distribution_from_json(j["strong_token_dist"], path + ".strong_token_dist");
  }
  if (j.contains("score_emission")) {
    const auto& e = j["score_emission"];
    if (!e.is_object()) throw Error(ErrorCode::ConfigError, path + ".score_emission: expected an object");
    if (e.contains("correct")) cfg.emission.correct = distribution_from_json(e["correct"], path + ".score_emission.correct");
    if (e.contains("incorrect")) {
      cfg.emission.incorrect = distribution_from_json(e["incorrect"], path + ".score_emission.incorrect");
    }
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    const std::string npath = path + ".noise";
    if (!n.is_object() || !n.contains("mode") || !n["mode"].is_string()) {
      throw Error(ErrorCode::ConfigError, npath + ".mode: expected a string");
    }
    const auto mode = n["mode"].get<std::string>();
    auto param = [&](const char* key) {
      if (!n.contains(key) || !n[key].is_number()) throw Error(ErrorCode::ConfigError, npath + "." + key + ": expected a number");
      return n[key].get<double>();
    };
    if (mode == "none") {
      cfg.noise = NoiseSpec::none();
    } else if (mode == "extra_variance") {
      cfg.noise = NoiseSpec::extra_variance(param("scale"));
    } else if (mode == "miscalibration") {
      cfg.noise = NoiseSpec::miscalibration(param("shift"));
    } else {
      throw Error(ErrorCode::ConfigError, npath + ".mode: unknown noise mode '" + mode + "'");
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, path + "." + e.detail());
  }
  return cfg;
}

nlohmann::json to_json(const EnvConfig& cfg) {
  nlohmann::json noise;
  switch (cfg.noise.mode) {
    case NoiseSpec::Mode::None: noise = {{"mode", "none"}}; break;
    case NoiseSpec::Mode::ExtraVariance: noise = {{"mode", "extra_variance"}, {"scale", cfg.noise.param}}; break;
    case NoiseSpec::Mode::Miscalibration: noise = {{"mode", "miscalibration"}, {"shift", cfg.noise.param}}; break;
  }
  return {{"p_weak", cfg.p_weak},
          {"p_strong", cfg.p_strong},
          {"max_steps", cfg.max_steps},
          {"horizon_dist", to_json(cfg.horizon)},
          {"weak_token_dist", to_json(cfg.weak_tokens)},
          {"strong_token_dist", to_json(cfg.strong_tokens)},
          {"score_emission", {{"correct", to_json(cfg.emission.correct)}, {"incorrect", to_json(cfg.emission.incorrect)}}},
          {"noise", noise}};
}

LatentClass latent_step(LatentClass cls, RoutingAction action, const EnvConfig& cfg, Rng& rng) {
  if (cls == LatentClass::Terminal) throw Error(ErrorCode::SteppedTerminal, "latent_step from Terminal");
  // Always consume exactly one uniform so coupled episodes stay aligned.
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  if (cls == LatentClass::S1) return LatentClass::S1;
  if (action == RoutingAction::Regenerate) return u < cfg.p_strong ? LatentClass::S0 : LatentClass::S2;
  if (cls == LatentClass::S2) return LatentClass::S1;
  return u < cfg.p_weak ? LatentClass::S0 : LatentClass::S2;
}

double emit_score(LatentClass landed, const ScoreEmission& emission, const NoiseSpec& noise, Rng& rng) {
  const auto& dist = landed == LatentClass::S0 ? emission.correct : emission.incorrect;
  return noise.apply(std::clamp(dist.sample(rng), 0.0, 1.0), rng);
}

double rl_return(const EpisodeResult& result, double lambda) {
  return static_cast<double>(result.final_reward) - lambda * static_cast<double>(result.ledger.strong_tokens);
}

std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t index) {
  return derive_seed(derive_seed(master_seed, "episodes"), index);
}

namespace {

int sample_horizon(const EnvConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, "horizon"));
  const auto h = cfg.horizon.sample_int(rng);
  return static_cast<int>(std::clamp<std::int64_t>(h, 1, cfg.max_steps));
}

// Each (episode, step, generator) owns its own stream: token count first, then
// the transition uniform, then the score. Policies evaluated on the same seed
// therefore see identical draws whenever they reach the same latent class.
Rng step_stream(std::uint64_t seed, const char* who, int step) {
  return make_rng(derive_seed(derive_seed(seed, who), static_cast<std::uint64_t>(step)));
}

class CallbackRouter final : public Router {
 public:
  explicit CallbackRouter(const DecisionFn& fn) : fn_(fn) {}
  RoutingAction decide(const AggFeatures& f, const TraceState& prefix) override { return fn_(f, prefix); }

 private:
  const DecisionFn& fn_;
};

}  // namespace

EpisodeResult run_episode(Router& router, const EnvConfig& cfg, double lambda, std::uint64_t seed) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda must be >= 0");
  EpisodeResult out;
  out.horizon = sample_horizon(cfg, seed);
  out.trace = TraceState("episode-" + std::to_string(seed), cfg.max_steps);
  out.latent_path.reserve(out.horizon + 1);
  out.decisions.reserve(out.horizon);

  LatentClass cls = LatentClass::S0;
  for (int t = 1; t <= out.horizon; ++t) {
    Rng weak_rng = step_stream(seed, "weak", t);
    StepRecord candidate;
    candidate.origin = Origin::Weak;
    candidate.token_count = cfg.weak_tokens.sample_int(weak_rng);
    const LatentClass weak_cls = latent_step(cls, RoutingAction::Continue, cfg, weak_rng);
    candidate.score = emit_score(weak_cls, cfg.emission, cfg.noise, weak_rng);
    candidate.truth = weak_cls == LatentClass::S0 ? StepTruth::Correct : StepTruth::Incorrect;
    out.ledger.charge_weak(candidate.token_count);

    const AggFeatures feats = candidate_features(out.trace, candidate);
    RoutingAction action;
    try {
      action = router.decide(feats, out.trace);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::PolicyFailure, e.what());
    }

    Decision decision{feats, action, 0, weak_cls};
    if (action == RoutingAction::Continue) {
      cls = weak_cls;
      out.trace = append_step(out.trace, candidate);
    } else {
      Rng strong_rng = step_stream(seed, "strong", t);
      StepRecord strong;
      strong.origin = Origin::Strong;
      strong.token_count = cfg.strong_tokens.sample_int(strong_rng);
      cls = latent_step(cls, RoutingAction::Regenerate, cfg, strong_rng);
      strong.score = emit_score(cls, cfg.emission, cfg.noise, strong_rng);
      strong.truth = cls == LatentClass::S0 ? StepTruth::Correct : StepTruth::Incorrect;
      out.ledger.charge_strong(strong.token_count);
      decision.strong_tokens = strong.token_count;
      const AggFeatures strong_feats = candidate_features(out.trace, strong);
      out.trace = append_step(out.trace, strong);
      router.on_regenerated(strong_feats);
    }
    out.decisions.push_back(decision);
    out.latent_path.push_back(cls);
  }
  out.trace = out.trace.terminate();
  out.final_reward = cls == LatentClass::S0 ? 1 : 0;
  out.latent_path.push_back(LatentClass::Terminal);
  return out;
}

EpisodeResult run_episode(const DecisionFn& policy, const EnvConfig& cfg, double lambda, std::uint64_t seed) {
  CallbackRouter router(policy);
  return run_episode(router, cfg, lambda, seed);
}

std::int64_t strong_only_tokens(const EnvConfig& cfg, std::uint64_t seed) {
  const int horizon = sample_horizon(cfg, seed);
  std::int64_t total = 0;
  for (int t = 1; t <= horizon; ++t) {
    Rng rng = step_stream(seed, "strong", t);
    total += cfg.strong_tokens.sample_int(rng);
  }
  return total;
}

LatentClass strong_step_class(const EnvConfig& cfg, std::uint64_t seed, int step, LatentClass prefix_class) {
  Rng rng = step_stream(seed, "strong", step);
  (void)cfg.strong_tokens.sample_int(rng);
  return latent_step(prefix_class, RoutingAction::Regenerate, cfg, rng);
}

std::vector<TraceState> replay_load(const std::string& path, int max_steps) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_jsonl(in, max_steps);
}

std::vector<LabeledObservation> collect_labeled_observations(const EnvConfig& cfg, int episodes, double regen_prob,
                                                             std::uint64_t seed) {
  std::vector<LabeledObservation> rows;
  for (int e = 0; e < episodes; ++e) {
    const auto ep_seed = episode_seed(seed, static_cast<std::uint64_t>(e));
    Rng behaviour = make_rng(derive_seed(ep_seed, "behaviour"));
    std::bernoulli_distribution coin(regen_prob);
    DecisionFn policy = [&](const AggFeatures&, const TraceState&) {
      return coin(behaviour) ? RoutingAction::Regenerate : RoutingAction::Continue;
    };
    const auto result = run_episode(policy, cfg, 0.0, ep_seed);
    for (std::size_t t = 0; t < result.decisions.size(); ++t) {
      const auto& d = result.decisions[t];
      rows.push_back({d.features.min_prev_score, d.features.current_score, d.candidate_class});
      if (d.action == RoutingAction::Regenerate) {
        rows.push_back({d.features.min_prev_score, result.trace.steps()[t].score, result.latent_path[t]});
      }
    }
  }
  return rows;
}

std::vector<LatentClass> latent_classes(const TraceState& trace) {
  std::vector<LatentClass> out;
  out.reserve(trace.steps().size());
  LatentClass cls = LatentClass::S0;
  for (const auto& s : trace.steps()) {
    if (!s.truth) throw Error(ErrorCode::InvariantViolation, "truth");
    const bool correct = *s.truth == StepTruth::Correct;
    if (cls == LatentClass::S1 || (cls == LatentClass::S2 && s.origin == Origin::Weak)) {
      cls = LatentClass::S1;
    } else {
      cls = correct ? LatentClass::S0 : LatentClass::S2;
    }
    out.push_back(cls);
  }
  return out;
}

std::vector<LabeledObservation> labeled_observations_from_traces(const std::vector<TraceState>& traces) {
  std::vector<LabeledObservation> rows;
  for (const auto& trace : traces) {
    const auto classes = latent_classes(trace);
    double min_prev = 1.0;
    for (std::size_t t = 0; t < classes.size(); ++t) {
      const double score = trace.steps()[t].score;
      rows.push_back({min_prev, score, classes[t]});
      min_prev = std::min(min_prev, score);
    }
  }
  return rows;
}

nlohmann::json to_json(const LabeledObservation& obs) {
  return {{"min_prev", obs.min_prev}, {"current", obs.current}, {"class", to_string(obs.cls)}};
}

std::vector<LabeledObservation> read_labeled_jsonl(std::istream& in) {
  std::vector<LabeledObservation> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    auto num = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_number()) throw Error(ErrorCode::InvariantViolation, key);
      const double v = j[key].get<double>();
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvariantViolation, key);
      return v;
    };
    LabeledObservation row;
    row.min_prev = num("min_prev");
    row.current = num("current");
    if (!j.contains("class") || !j["class"].is_string()) throw Error(ErrorCode::InvariantViolation, "class");
    const auto c = j["class"].get<std::string>();
    if (c == "S0") {
      row.cls = LatentClass::S0;
    } else if (c == "S1") {
      row.cls = LatentClass::S1;
    } else if (c == "S2") {
      row.cls = LatentClass::S2;
    } else {
      throw Error(ErrorCode::InvariantViolation, "class");
    }
    rows.push_back(row);
  }
  return rows;
}

void write_labeled_jsonl(std::ostream& out, const std::vector<LabeledObservation>& rows) {
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

}  // namespace steproute
