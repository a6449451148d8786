#include "steproute/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace steproute {

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<EpisodeOutcome> evaluate_router(const RouterFactory& factory, const EnvConfig& env, int episodes,
                                            std::uint64_t seed, unsigned threads) {
  if (episodes < 1) throw Error(ErrorCode::ConfigError, "episodes must be >= 1");
  std::vector<EpisodeOutcome> out(static_cast<std::size_t>(episodes));
  parallel_for(
      out.size(),
      [&](std::size_t i) {
        auto router = factory();
        const auto r = run_episode(*router, env, 0.0, episode_seed(seed, i));
        out[i] = {static_cast<std::uint8_t>(r.final_reward), r.ledger.strong_tokens};
      },
      threads);
  return out;
}

namespace {

class ConstantRouter final : public Router {
 public:
  explicit ConstantRouter(RoutingAction a) : a_(a) {}
  RoutingAction decide(const AggFeatures&, const TraceState&) override { return a_; }

 private:
  RoutingAction a_;
};

template <typename F>
double mean_over(std::size_t n, const std::vector<std::size_t>& index, F&& f) {
  double s = 0.0;
  const std::size_t m = index.empty() ? n : index.size();
  for (std::size_t k = 0; k < m; ++k) s += f(index.empty() ? k : index[k]);
  return s / static_cast<double>(m);
}

}  // namespace

Endpoints measure_endpoints(const EnvConfig& env, int episodes, std::uint64_t seed, unsigned threads) {
  Endpoints e;
  e.weak = evaluate_router([] { return std::make_unique<ConstantRouter>(RoutingAction::Continue); }, env, episodes,
                           seed, threads);
  e.strong = evaluate_router([] { return std::make_unique<ConstantRouter>(RoutingAction::Regenerate); }, env,
                             episodes, seed, threads);
  return e;
}

SweepPoint summarize(double control, const std::vector<EpisodeOutcome>& outcomes, const Endpoints& ends,
                     const std::vector<std::size_t>& index) {
  if (outcomes.size() != ends.strong.size()) throw Error(ErrorCode::LengthMismatch, "outcomes vs endpoints");
  const std::size_t n = outcomes.size();
  SweepPoint p;
  p.control = control;
  p.accuracy = mean_over(n, index, [&](std::size_t i) { return static_cast<double>(outcomes[i].correct); });
  p.mean_strong_tokens = mean_over(n, index, [&](std::size_t i) { return static_cast<double>(outcomes[i].strong_tokens); });
  const double strong_only =
      mean_over(n, index, [&](std::size_t i) { return static_cast<double>(ends.strong[i].strong_tokens); });
  p.normalized_cost = p.mean_strong_tokens / strong_only;
  p.n_queries = static_cast<std::int64_t>(index.empty() ? n : index.size());
  return p;
}

TradeoffCurve assemble_curve(const SweepResult& sweep, const std::vector<std::size_t>& index) {
  TradeoffCurve c;
  const auto& e = sweep.endpoints;
  const std::size_t n = e.weak.size();
  c.r_weak = mean_over(n, index, [&](std::size_t i) { return static_cast<double>(e.weak[i].correct); });
  c.r_strong = mean_over(n, index, [&](std::size_t i) { return static_cast<double>(e.strong[i].correct); });
  c.mean_strong_only_tokens =
      mean_over(n, index, [&](std::size_t i) { return static_cast<double>(e.strong[i].strong_tokens); });
  for (std::size_t k = 0; k < sweep.controls.size(); ++k) {
    c.points.push_back(summarize(sweep.controls[k], sweep.outcomes[k], e, index));
  }
  c.normalize();
  return c;
}

SweepResult sweep_threshold(const EnvConfig& env, const std::vector<double>& ladder, int episodes_per_point,
                            std::uint64_t seed, bool takeover, unsigned threads) {
  for (double k : ladder) {
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorCode::ConfigError, "threshold ladder values must lie in [0,1]");
  }
  SweepResult s;
  s.endpoints = measure_endpoints(env, episodes_per_point, seed, threads);
  s.controls = ladder;
  for (double k : ladder) {
    const ThresholdPolicy pol{k, takeover};
    s.outcomes.push_back(
        evaluate_router([pol] { return std::make_unique<ThresholdRouter>(pol); }, env, episodes_per_point, seed, threads));
  }
  s.curve = assemble_curve(s);
  return s;
}

SweepResult sweep_lambda_agg(const EnvConfig& env, const std::vector<double>& ladder, const AggSweepSettings& settings,
                             int episodes_per_point, std::uint64_t seed, unsigned threads, std::vector<PolicyNet>* nets) {
  SweepResult s;
  s.endpoints = measure_endpoints(env, episodes_per_point, seed, threads);
  s.controls = ladder;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i] >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda values must be >= 0");
    auto [net, run] = train_agg(env, ladder[i], settings.ppo, derive_seed(settings.train_seed, i));
    const FeatureScaling scaling = settings.ppo.scaling;
    const PolicyNet* net_ptr = &net;
    s.outcomes.push_back(evaluate_router([net_ptr, scaling] { return std::make_unique<AggRouter>(*net_ptr, scaling); },
                                         env, episodes_per_point, seed, threads));
    if (nets) nets->push_back(std::move(net));
  }
  s.curve = assemble_curve(s);
  return s;
}

PomdpPlanner make_planner(const EnvConfig& env, double lambda, const PomdpSweepSettings& settings) {
  if (!settings.model) throw Error(ErrorCode::ConfigError, "POMDP sweep needs an observation model");
  PomdpPlanner planner;
  planner.spec.p_weak = env.p_weak;
  planner.spec.p_strong = env.p_strong;
  planner.spec.lambda = lambda;
  planner.spec.expected_strong_tokens = env.strong_tokens.mean();
  planner.spec.max_steps = env.max_steps;
  planner.spec.termination_prob = settings.termination_prob;
  planner.likelihood = std::make_shared<TabulatedObservation>(*settings.model, settings.tabulation);
  planner.grid = std::make_shared<DiscretizedObservation>(
      DiscretizedObservation::from_model(*settings.model, settings.solver.observation_cells));
  planner.solver = settings.solver;
  if (settings.lookup_resolution > 0) {
    planner.cache = precompute_lookup(planner.spec, *planner.grid, settings.lookup_resolution, settings.solver);
  }
  return planner;
}

SweepResult sweep_lambda_pomdp(const EnvConfig& env, const std::vector<double>& ladder,
                               const PomdpSweepSettings& settings, int episodes_per_point, std::uint64_t seed,
                               unsigned threads) {
  SweepResult s;
  s.endpoints = measure_endpoints(env, episodes_per_point, seed, threads);
  s.controls = ladder;
  for (double lambda : ladder) {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda values must be >= 0");
    const PomdpPlanner planner = make_planner(env, lambda, settings);
    const TriggerBand band = settings.band;
    const PomdpPlanner* p = &planner;
    s.outcomes.push_back(evaluate_router([p, band] { return std::make_unique<PomdpRouter>(*p, band); }, env,
                                         episodes_per_point, seed, threads));
  }
  s.curve = assemble_curve(s);
  return s;
}

BootstrapGap bootstrap_ibc_gap(const SweepResult& a, const SweepResult& b, int resamples, std::uint64_t seed) {
  const std::size_t n = a.endpoints.weak.size();
  if (n == 0 || b.endpoints.weak.size() != n) throw Error(ErrorCode::LengthMismatch, "sweeps must share episodes");
  BootstrapGap out;
  out.point = ibc_delta(a.curve) - ibc_delta(b.curve);
  Rng rng = make_rng(derive_seed(seed, "bootstrap"));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> gaps;
  std::vector<std::size_t> index(n);
  for (int r = 0; r < resamples; ++r) {
    for (auto& i : index) i = pick(rng);
    // Same index for both sweeps and their endpoints keeps the pairing intact.
    const auto ca = assemble_curve(a, index);
    const auto cb = assemble_curve(b, index);
    const auto da = ibc_detail(ca);
    const auto db = ibc_detail(cb);
    if (!da.mean_delta || !db.mean_delta) continue;
    gaps.push_back(*da.mean_delta - *db.mean_delta);
  }
  out.resamples = static_cast<int>(gaps.size());
  if (gaps.size() < 2) throw Error(ErrorCode::InsufficientSamples, "bootstrap produced fewer than two usable resamples");
  double mean = 0.0;
  for (double g : gaps) mean += g;
  mean /= static_cast<double>(gaps.size());
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  out.mean = mean;
  out.se = std::sqrt(var / static_cast<double>(gaps.size() - 1));
  return out;
}

namespace {

Distribution fit_beta(const std::vector<double>& xs, const Distribution& fallback) {
  if (xs.size() < 2) return fallback;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  if (!(m > 0.0 && m < 1.0 && v > 0.0 && v < m * (1 - m))) return fallback;
  const double common = m * (1 - m) / v - 1.0;
  return Distribution::beta(m * common, (1 - m) * common);
}

Distribution fit_lognormal(const std::vector<double>& tokens, const Distribution& fallback) {
  if (tokens.size() < 2) return fallback;
  double mu = 0.0;
  for (double t : tokens) mu += std::log(t);
  mu /= static_cast<double>(tokens.size());
  double var = 0.0;
  for (double t : tokens) var += (std::log(t) - mu) * (std::log(t) - mu);
  var /= static_cast<double>(tokens.size() - 1);
  return Distribution::lognormal_int(mu, std::max(1e-6, std::sqrt(var)), 1);
}

}  // namespace

EnvConfig fit_env_from_traces(const std::vector<TraceState>& traces) {
  EnvConfig env;
  const auto [pw, ps] = estimate_accuracies(traces);
  env.p_weak = pw;
  env.p_strong = ps;
  std::vector<double> weak_tokens, strong_tokens, correct_scores, incorrect_scores;
  int shortest = env.max_steps, longest = 1;
  for (const auto& t : traces) {
    if (t.steps().empty()) continue;
    shortest = std::min(shortest, t.step_index());
    longest = std::max(longest, t.step_index());
    for (const auto& s : t.steps()) {
      (s.origin == Origin::Weak ? weak_tokens : strong_tokens).push_back(static_cast<double>(s.token_count));
      (*s.truth == StepTruth::Correct ? correct_scores : incorrect_scores).push_back(s.score);
    }
  }
  env.horizon = Distribution::uniform_int(std::min(shortest, longest), longest);
  env.weak_tokens = fit_lognormal(weak_tokens, env.weak_tokens);
  env.strong_tokens = fit_lognormal(strong_tokens, env.strong_tokens);
  env.emission.correct = fit_beta(correct_scores, env.emission.correct);
  env.emission.incorrect = fit_beta(incorrect_scores, env.emission.incorrect);
  env.validate();
  return env;
}

}  // namespace steproute
