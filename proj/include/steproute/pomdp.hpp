#pragma once

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "steproute/kde.hpp"
#include "steproute/pbvi.hpp"
#include "steproute/sim.hpp"

namespace steproute {

/// Routing POMDP over the class of the trace including the current candidate.
struct PomdpSpec {
  double p_weak = 0.6;
  double p_strong = 0.95;
  double lambda = 0.0;
  double task_reward = 1.0;
  double expected_strong_tokens = 1.0;
  int max_steps = kDefaultMaxSteps;
  double termination_prob = 1.0 / 18.0;

  double regenerate_cost() const { return lambda * expected_strong_tokens; }
  void validate() const;
};

nlohmann::json to_json(const PomdpSpec& spec);
PomdpSpec pomdp_spec_from_json(const nlohmann::json& j, const std::string& path = "pomdp");

/// Belief over (S0, S1, S2); Terminal is excluded.
struct Belief {
  Eigen::Vector3d probs = Eigen::Vector3d(1.0, 0.0, 0.0);
  int step_index = 0;

  double operator[](LatentClass cls) const { return probs[class_index(cls)]; }
};

/// Next-state distribution over (S0, S1, S2, Terminal). Throws SteppedTerminal from Terminal.
std::array<double, 4> transition_dist(LatentClass cls, RoutingAction action, const PomdpSpec& spec);

/// Predict with transition_dist, weight by the observation likelihood and
/// renormalize over the non-terminal classes. Throws DegenerateBelief when the
/// unnormalized mass falls below 1e-300.
Belief belief_update(const Belief& belief, RoutingAction action, const Observation& obs, const PomdpSpec& spec,
                     const ObservationLikelihood& model);

/// (p_weak, p_strong): fraction of weak-origin and strong-origin steps labeled
/// Correct. Throws NoSamples naming the origin with no steps.
std::pair<double, double> estimate_accuracies(const std::vector<TraceState>& traces);

/// P(final answer correct | class, action) if the trace ends on this step.
double terminal_success(LatentClass cls, RoutingAction action, const PomdpSpec& spec);

/// Finite POMDP over (S0, S1, S2) with observations on an n x n cell grid.
/// Termination is folded into the discount (1 - termination_prob) and the
/// immediate reward termination_prob * task_reward * terminal_success.
FinitePomdp build_routing_pomdp(const PomdpSpec& spec, const DiscretizedObservation& obs);

struct RoutingSolverConfig {
  int observation_cells = 8;
  int support_resolution = 20;  // lattice added to the belief set by precompute_lookup
  SolverOptions solver;

  RoutingSolverConfig() {
    solver.max_beliefs = 120;
    solver.merge_distance = 0.01;
    solver.tolerance = 1e-8;
  }
};

/// Solves the routing POMDP from `init`. A zero termination probability
/// switches to a finite horizon of spec.max_steps.
AlphaPolicy solve_routing(const PomdpSpec& spec, const ObservationModel& model, const Belief& init,
                          const RoutingSolverConfig& config = {});
AlphaPolicy solve_routing(const PomdpSpec& spec, const DiscretizedObservation& obs, const Belief& init,
                          const RoutingSolverConfig& config = {});

inline RoutingAction routing_action(int a) { return a == 0 ? RoutingAction::Continue : RoutingAction::Regenerate; }

}  // namespace steproute
