#include "steproute/pomdp.hpp"

#include <cmath>

namespace steproute {

namespace {

constexpr LatentClass kClasses[3] = {LatentClass::S0, LatentClass::S1, LatentClass::S2};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, field + ": " + what);
}

}  // namespace

void PomdpSpec::validate() const {
  require(p_weak >= 0 && p_weak <= 1, "p_weak", "must lie in [0,1]");
  require(p_strong >= 0 && p_strong <= 1, "p_strong", "must lie in [0,1]");
  require(lambda >= 0 && std::isfinite(lambda), "lambda", "must be finite and >= 0");
  require(std::isfinite(task_reward), "task_reward", "must be finite");
  require(expected_strong_tokens > 0 && std::isfinite(expected_strong_tokens), "expected_strong_tokens",
          "must be positive");
  require(max_steps >= 1, "max_steps", "must be positive");
  require(termination_prob >= 0 && termination_prob <= 1, "termination_prob", "must lie in [0,1]");
}

nlohmann::json to_json(const PomdpSpec& spec) {
  return {{"p_weak", spec.p_weak},
          {"p_strong", spec.p_strong},
          {"lambda", spec.lambda},
          {"task_reward", spec.task_reward},
          {"expected_strong_tokens", spec.expected_strong_tokens},
          {"max_steps", spec.max_steps},
          {"termination_prob", spec.termination_prob}};
}

PomdpSpec pomdp_spec_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, path + ": expected an object");
  PomdpSpec spec;
  auto number = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw Error(ErrorCode::ConfigError, path + "." + key + ": expected a number");
    out = j[key].get<double>();
  };
  number("p_weak", spec.p_weak);
  number("p_strong", spec.p_strong);
  number("lambda", spec.lambda);
  number("task_reward", spec.task_reward);
  number("expected_strong_tokens", spec.expected_strong_tokens);
  number("termination_prob", spec.termination_prob);
  if (j.contains("max_steps")) {
    if (!j["max_steps"].is_number_integer()) throw Error(ErrorCode::ConfigError, path + ".max_steps: expected an integer");
    spec.max_steps = j["max_steps"].get<int>();
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, path + "." + e.detail());
  }
  return spec;
}

std::array<double, 4> transition_dist(LatentClass cls, RoutingAction action, const PomdpSpec& spec) {
  if (cls == LatentClass::Terminal) throw Error(ErrorCode::SteppedTerminal, "transition from Terminal");
  const double live = 1.0 - spec.termination_prob;
  std::array<double, 4> d{0, 0, 0, 0};  // S0, S1, S2, Terminal
  if (cls == LatentClass::S1) {
    d[1] = live;
  } else if (action == RoutingAction::Regenerate) {
    d[0] = live * spec.p_strong;
    d[2] = live * (1.0 - spec.p_strong);
  } else if (cls == LatentClass::S2) {
    d[1] = live;
  } else {
    d[0] = live * spec.p_weak;
    d[2] = live * (1.0 - spec.p_weak);
  }
  d[3] = 1.0 - (d[0] + d[1] + d[2]);
  return d;
}

Belief belief_update(const Belief& belief, RoutingAction action, const Observation& obs, const PomdpSpec& spec,
                     const ObservationLikelihood& model) {
  Eigen::Vector3d next = Eigen::Vector3d::Zero();
  for (int s = 0; s < 3; ++s) {
    if (belief.probs[s] == 0.0) continue;
    const auto d = transition_dist(kClasses[s], action, spec);
    next += belief.probs[s] * Eigen::Vector3d(d[0], d[1], d[2]);
  }
  for (int s = 0; s < 3; ++s) next[s] *= model.likelihood(kClasses[s], obs);
  const double z = next.sum();
  if (!(z >= 1e-300)) throw Error(ErrorCode::DegenerateBelief, "belief mass " + std::to_string(z));
  return {next / z, belief.step_index + 1};
}

std::pair<double, double> estimate_accuracies(const std::vector<TraceState>& traces) {
  std::int64_t weak_n = 0, weak_ok = 0, strong_n = 0, strong_ok = 0;
  for (const auto& trace : traces) {
    for (const auto& s : trace.steps()) {
      if (!s.truth) throw Error(ErrorCode::InvariantViolation, "truth label missing in '" + trace.query_id() + "'");
      const bool ok = *s.truth == StepTruth::Correct;
      if (s.origin == Origin::Weak) {
        ++weak_n;
        weak_ok += ok;
      } else {
        ++strong_n;
        strong_ok += ok;
      }
    }
  }
  if (weak_n == 0) throw Error(ErrorCode::NoSamples, "Weak");
  if (strong_n == 0) throw Error(ErrorCode::NoSamples, "Strong");
  return {static_cast<double>(weak_ok) / static_cast<double>(weak_n),
          static_cast<double>(strong_ok) / static_cast<double>(strong_n)};
}

double terminal_success(LatentClass cls, RoutingAction action, const PomdpSpec& spec) {
  switch (cls) {
    case LatentClass::S0: return action == RoutingAction::Continue ? 1.0 : spec.p_strong;
    case LatentClass::S2: return action == RoutingAction::Continue ? 0.0 : spec.p_strong;
    default: return 0.0;
  }
}

FinitePomdp build_routing_pomdp(const PomdpSpec& spec, const DiscretizedObservation& obs) {
  spec.validate();
  const int cells = obs.cells_per_axis() * obs.cells_per_axis();
  FinitePomdp p;
  p.states = 3;
  p.actions = 2;
  p.observations = cells;
  p.discount = 1.0 - spec.termination_prob;
  p.reward.resize(3, 2);
  p.final_reward.resize(3, 2);
  Eigen::MatrixXd emit(3, cells);
  for (int s = 0; s < 3; ++s) emit.row(s) = obs.flat(kClasses[s]).transpose();
  for (int a = 0; a < 2; ++a) {
    const auto action = routing_action(a);
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(3, 3);
    for (int s = 0; s < 3; ++s) {
      // Rows conditioned on survival; the survival factor lives in the discount.
      PomdpSpec live = spec;
      live.termination_prob = 0.0;
      const auto d = transition_dist(kClasses[s], action, live);
      t.row(s) << d[0], d[1], d[2];
      const double cost = action == RoutingAction::Regenerate ? spec.regenerate_cost() : 0.0;
      const double success = spec.task_reward * terminal_success(kClasses[s], action, spec);
      p.reward(s, a) = -cost + spec.termination_prob * success;
      p.final_reward(s, a) = -cost + success;
    }
    p.transition.push_back(t);
    p.observation.push_back(emit);
  }
  return p;
}

AlphaPolicy solve_routing(const PomdpSpec& spec, const DiscretizedObservation& obs, const Belief& init,
                          const RoutingSolverConfig& config) {
  const auto pomdp = build_routing_pomdp(spec, obs);
  SolverOptions options = config.solver;
  if (spec.termination_prob == 0.0) options.horizon = spec.max_steps;
  return solve(pomdp, init.probs, options);
}

AlphaPolicy solve_routing(const PomdpSpec& spec, const ObservationModel& model, const Belief& init,
                          const RoutingSolverConfig& config) {
  return solve_routing(spec, DiscretizedObservation::from_model(model, config.observation_cells), init, config);
}

}  // namespace steproute
