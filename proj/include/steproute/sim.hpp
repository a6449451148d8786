#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steproute/random.hpp"
#include "steproute/trace.hpp"

namespace steproute {

enum class LatentClass { S0, S1, S2, Terminal };

const char* to_string(LatentClass c);

struct NoiseSpec {
  enum class Mode { None, ExtraVariance, Miscalibration };
  Mode mode = Mode::None;
  double param = 0.0;  // noise std-dev for ExtraVariance, additive shift for Miscalibration

  static NoiseSpec none() { return {}; }
  static NoiseSpec extra_variance(double scale) { return {Mode::ExtraVariance, scale}; }
  static NoiseSpec miscalibration(double shift) { return {Mode::Miscalibration, shift}; }

  /// Corrupts a score; the result is clamped to [0,1].
  double apply(double score, Rng& rng) const;
};

struct ScoreEmission {
  Distribution correct = Distribution::beta(8, 2);
  Distribution incorrect = Distribution::beta(2, 5);
};

struct EnvConfig {
  double p_weak = 0.6;
  double p_strong = 0.95;
  Distribution horizon = Distribution::uniform_int(6, 30);
  Distribution weak_tokens = Distribution::lognormal_int(3.5, 0.5, 1);
  Distribution strong_tokens = Distribution::lognormal_int(3.5, 0.5, 1);
  ScoreEmission emission;
  NoiseSpec noise;
  int max_steps = kDefaultMaxSteps;

  /// Throws ConfigError naming the field.
  void validate() const;
};

EnvConfig env_from_json(const nlohmann::json& j, const std::string& path = "env");
nlohmann::json to_json(const EnvConfig& cfg);

/// One latent transition. Continue: S0 -> S0 w.p. p_weak else S2, S2 -> S1.
/// Regenerate: S0|S2 -> S0 w.p. p_strong else S2. S1 is absorbing.
LatentClass latent_step(LatentClass cls, RoutingAction action, const EnvConfig& cfg, Rng& rng);

/// Score of a freshly produced step; `landed` is the class the step moved the trace into.
double emit_score(LatentClass landed, const ScoreEmission& emission, const NoiseSpec& noise, Rng& rng);

/// Per-episode decision maker. A fresh instance is used for every episode, so
/// implementations may keep episode-local state (beliefs, escalation flags).
class Router {
 public:
  virtual ~Router() = default;
  /// Called once per step with the weak candidate's features and the accepted prefix.
  virtual RoutingAction decide(const AggFeatures& candidate, const TraceState& prefix) = 0;
  /// Called after a regeneration with the features of the strong replacement.
  virtual void on_regenerated(const AggFeatures& /*strong_step*/) {}
};

using DecisionFn = std::function<RoutingAction(const AggFeatures&, const TraceState&)>;

struct Decision {
  AggFeatures features;
  RoutingAction action = RoutingAction::Continue;
  std::int64_t strong_tokens = 0;  // charged by this decision
  LatentClass candidate_class = LatentClass::S0;  // ground truth of the weak candidate
};

struct EpisodeResult {
  int final_reward = 0;
  CostLedger ledger;
  TraceState trace;
  std::vector<LatentClass> latent_path;  // class after each accepted step, then Terminal
  std::vector<Decision> decisions;
  int horizon = 0;
};

/// final_reward - lambda * strong_tokens.
double rl_return(const EpisodeResult& result, double lambda);

EpisodeResult run_episode(Router& router, const EnvConfig& cfg, double lambda, std::uint64_t episode_seed);
EpisodeResult run_episode(const DecisionFn& policy, const EnvConfig& cfg, double lambda, std::uint64_t episode_seed);

/// Seed of episode `index` under a master seed.
std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t index);

/// Strong tokens of the strong-only run of an episode (C_s(q)); matches the
/// always-regenerate policy on the same seed.
std::int64_t strong_only_tokens(const EnvConfig& cfg, std::uint64_t episode_seed);

/// Class the strong replacement at `step` would land in from `prefix_class`
/// (counterfactual draw from the episode's strong stream).
LatentClass strong_step_class(const EnvConfig& cfg, std::uint64_t episode_seed, int step, LatentClass prefix_class);

std::vector<TraceState> replay_load(const std::string& path, int max_steps = kDefaultMaxSteps);

/// Labeled observation (min_prev, current, class) for observation-model fitting.
struct LabeledObservation {
  double min_prev = 1.0;
  double current = 1.0;
  LatentClass cls = LatentClass::S0;
};

/// Collects one labeled observation per produced step (weak candidates and strong
/// replacements) while a behaviour policy regenerates uniformly at `regen_prob`.
std::vector<LabeledObservation> collect_labeled_observations(const EnvConfig& cfg, int episodes, double regen_prob,
                                                             std::uint64_t seed);

/// Class after each accepted step, replaying the latent dynamics on the truth
/// labels: a weak step after S2 lands in S1, a strong step after S2 can recover.
std::vector<LatentClass> latent_classes(const TraceState& trace);

/// One labeled row per accepted step, classes from latent_classes.
std::vector<LabeledObservation> labeled_observations_from_traces(const std::vector<TraceState>& traces);

nlohmann::json to_json(const LabeledObservation& obs);
std::vector<LabeledObservation> read_labeled_jsonl(std::istream& in);
void write_labeled_jsonl(std::ostream& out, const std::vector<LabeledObservation>& rows);

}  // namespace steproute
