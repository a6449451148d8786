#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "steproute/metrics.hpp"
#include "steproute/ppo.hpp"
#include "steproute/router.hpp"
#include "steproute/threshold.hpp"

namespace steproute {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware concurrency).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned threads = 0);

struct EpisodeOutcome {
  std::uint8_t correct = 0;
  std::int64_t strong_tokens = 0;
};

using RouterFactory = std::function<std::unique_ptr<Router>()>;

/// Episode i uses episode_seed(seed, i), so every policy sees the same queries.
std::vector<EpisodeOutcome> evaluate_router(const RouterFactory& factory, const EnvConfig& env, int episodes,
                                            std::uint64_t seed, unsigned threads = 0);

/// Weak-only and strong-only runs on the same seeds, plus C_s(q) per episode.
struct Endpoints {
  std::vector<EpisodeOutcome> weak;
  std::vector<EpisodeOutcome> strong;
};

Endpoints measure_endpoints(const EnvConfig& env, int episodes, std::uint64_t seed, unsigned threads = 0);

/// Point statistics over an episode subset (all episodes when `index` is empty).
SweepPoint summarize(double control, const std::vector<EpisodeOutcome>& outcomes, const Endpoints& ends,
                     const std::vector<std::size_t>& index = {});

struct SweepResult {
  TradeoffCurve curve;
  Endpoints endpoints;
  std::vector<double> controls;
  std::vector<std::vector<EpisodeOutcome>> outcomes;  // per control, per episode
};

/// Curve from stored outcomes restricted to `index` (all episodes when empty).
TradeoffCurve assemble_curve(const SweepResult& sweep, const std::vector<std::size_t>& index = {});

SweepResult sweep_threshold(const EnvConfig& env, const std::vector<double>& ladder, int episodes_per_point,
                            std::uint64_t seed, bool takeover = false, unsigned threads = 0);

struct AggSweepSettings {
  PpoConfig ppo;
  std::uint64_t train_seed = 1;
};

struct PomdpSweepSettings {
  RoutingSolverConfig solver;
  TriggerBand band;
  int lookup_resolution = 50;  // 0 = fresh solve at every consulted step
  int tabulation = 128;
  std::shared_ptr<const ObservationModel> model;
  double termination_prob = 1.0 / 18.0;
};

/// Trains one Agg policy per lambda and evaluates it greedily.
SweepResult sweep_lambda_agg(const EnvConfig& env, const std::vector<double>& ladder, const AggSweepSettings& settings,
                             int episodes_per_point, std::uint64_t seed, unsigned threads = 0,
                             std::vector<PolicyNet>* nets = nullptr);

/// Builds a planner per lambda (p_weak, p_strong and token mean from `env`).
SweepResult sweep_lambda_pomdp(const EnvConfig& env, const std::vector<double>& ladder,
                               const PomdpSweepSettings& settings, int episodes_per_point, std::uint64_t seed,
                               unsigned threads = 0);

PomdpPlanner make_planner(const EnvConfig& env, double lambda, const PomdpSweepSettings& settings);

struct BootstrapGap {
  double mean = 0.0;
  double se = 0.0;
  double point = 0.0;  // gap on the full sample
  int resamples = 0;
};

/// Paired bootstrap over episodes of ibc_delta(a) - ibc_delta(b); both sweeps
/// must share seeds and episode counts. Resamples with no reachable target are skipped.
BootstrapGap bootstrap_ibc_gap(const SweepResult& a, const SweepResult& b, int resamples, std::uint64_t seed);

/// Simulator parameters estimated from a labeled corpus: accuracies by origin,
/// token counts as log-normal, horizon as uniform over observed lengths, score
/// emissions as method-of-moments betas.
EnvConfig fit_env_from_traces(const std::vector<TraceState>& traces);

}  // namespace steproute
