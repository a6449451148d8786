#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace steproute {

/// Finite POMDP. transition[a](s, s') and observation[a](s', z) are row-stochastic
/// (transition rows may sum to less than one; the deficit is absorbing termination).
struct FinitePomdp {
  int states = 0;
  int actions = 0;
  int observations = 0;
  std::vector<Eigen::MatrixXd> transition;
  std::vector<Eigen::MatrixXd> observation;
  Eigen::MatrixXd reward;        // S x A, immediate reward
  Eigen::MatrixXd final_reward;  // S x A, replaces `reward` at the last stage of a finite horizon; empty = reward
  double discount = 1.0;

  void validate() const;
};

struct AlphaVector {
  Eigen::VectorXd values;
  int action = 0;
};

struct AlphaPolicy {
  std::vector<AlphaVector> vectors;
  bool budget_exceeded = false;
  int iterations = 0;
  std::vector<double> value_trace;  // value at the initial belief after each iteration

  double value(const Eigen::VectorXd& belief) const;
  /// Action of the maximizing vector; lowest action index wins ties.
  int action(const Eigen::VectorXd& belief) const;
};

struct SolverOptions {
  /// Finite-horizon backward induction when set; otherwise iterate to a fixed point (needs discount < 1).
  std::optional<int> horizon;
  int max_iterations = 2000;
  double tolerance = 1e-9;
  int max_beliefs = 200;
  double merge_distance = 0.0;  // L1 radius under which reachable beliefs are deduplicated
  double min_observation_prob = 1e-12;
  double time_budget_s = 120.0;
  std::vector<Eigen::VectorXd> extra_beliefs;
};

/// Beliefs reachable from `init` in breadth-first order, capped at options.max_beliefs.
std::vector<Eigen::VectorXd> reachable_beliefs(const FinitePomdp& pomdp, const Eigen::VectorXd& init,
                                               const SolverOptions& options);

/// Point-based value iteration. In stationary mode the value at every belief in
/// the set is nondecreasing across iterations (lower-bound start, backups never
/// replace a better vector). A hit iteration or time budget sets budget_exceeded
/// and returns the best policy so far.
AlphaPolicy solve(const FinitePomdp& pomdp, const Eigen::VectorXd& init_belief, const SolverOptions& options = {});

/// Bayes update of a belief over all states; returns the zero vector when the observation has zero probability.
Eigen::VectorXd pomdp_belief_update(const FinitePomdp& pomdp, const Eigen::VectorXd& belief, int action, int obs);

}  // namespace steproute
