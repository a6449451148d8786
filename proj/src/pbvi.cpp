#include "steproute/pbvi.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "steproute/error.hpp"

namespace steproute {

void FinitePomdp::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvariantViolation, "pomdp: " + what); };
  if (states < 1 || actions < 1 || observations < 1) fail("empty state, action or observation set");
  if (static_cast<int>(transition.size()) != actions || static_cast<int>(observation.size()) != actions) {
    fail("one transition and observation matrix per action");
  }
  for (int a = 0; a < actions; ++a) {
    const auto& t = transition[static_cast<std::size_t>(a)];
    const auto& o = observation[static_cast<std::size_t>(a)];
    if (t.rows() != states || t.cols() != states) fail("transition shape");
    if (o.rows() != states || o.cols() != observations) fail("observation shape");
    if ((t.array() < 0).any() || (t.rowwise().sum().array() > 1 + 1e-9).any()) fail("transition rows");
    if ((o.array() < 0).any() || ((o.rowwise().sum().array() - 1).abs() > 1e-9).any()) fail("observation rows");
  }
  if (reward.rows() != states || reward.cols() != actions) fail("reward shape");
  if (final_reward.size() != 0 && (final_reward.rows() != states || final_reward.cols() != actions)) {
    fail("final reward shape");
  }
  if (!(discount > 0 && discount <= 1)) fail("discount must lie in (0,1]");
}

double AlphaPolicy::value(const Eigen::VectorXd& belief) const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& v : vectors) best = std::max(best, belief.dot(v.values));
  return best;
}

int AlphaPolicy::action(const Eigen::VectorXd& belief) const {
  if (vectors.empty()) throw Error(ErrorCode::InvariantViolation, "empty alpha set");
  double best = -std::numeric_limits<double>::infinity();
  int act = 0;
  for (const auto& v : vectors) {
    const double x = belief.dot(v.values);
    if (x > best + 1e-12) {
      best = x;
      act = v.action;
    } else if (x >= best - 1e-12 && v.action < act) {
      best = std::max(best, x);
      act = v.action;
    }
  }
  return act;
}

Eigen::VectorXd pomdp_belief_update(const FinitePomdp& pomdp, const Eigen::VectorXd& belief, int action, int obs) {
  const auto a = static_cast<std::size_t>(action);
  Eigen::VectorXd next = pomdp.transition[a].transpose() * belief;
  next.array() *= pomdp.observation[a].col(obs).array();
  const double z = next.sum();
  if (z <= 0) return Eigen::VectorXd::Zero(belief.size());
  return next / z;
}

std::vector<Eigen::VectorXd> reachable_beliefs(const FinitePomdp& pomdp, const Eigen::VectorXd& init,
                                               const SolverOptions& options) {
  std::vector<Eigen::VectorXd> out;
  auto known = [&](const Eigen::VectorXd& b) {
    for (const auto& x : out) {
      if ((x - b).lpNorm<1>() <= options.merge_distance) return true;
    }
    return false;
  };
  out.push_back(init);
  for (std::size_t head = 0; head < out.size() && static_cast<int>(out.size()) < options.max_beliefs; ++head) {
    const Eigen::VectorXd b = out[head];
    for (int a = 0; a < pomdp.actions; ++a) {
      const Eigen::VectorXd pred = pomdp.transition[static_cast<std::size_t>(a)].transpose() * b;
      for (int z = 0; z < pomdp.observations; ++z) {
        Eigen::VectorXd next = pred.cwiseProduct(pomdp.observation[static_cast<std::size_t>(a)].col(z));
        const double p = next.sum();
        if (p <= options.min_observation_prob) continue;
        next /= p;
        if (known(next)) continue;
        out.push_back(std::move(next));
        if (static_cast<int>(out.size()) >= options.max_beliefs) return out;
      }
    }
  }
  return out;
}

namespace {

// Point-based backup machinery. For each (a, z), M_az = T_a * diag(O_a[:, z]) so
// that b' . alpha after the update is proportional to b . (M_az * alpha).
struct Backup {
  const FinitePomdp& pomdp;
  std::vector<Eigen::MatrixXd> m;  // index a * Z + z
  Eigen::MatrixXd beliefs;         // S x B

  Backup(const FinitePomdp& p, const std::vector<Eigen::VectorXd>& bs) : pomdp(p) {
    m.reserve(static_cast<std::size_t>(p.actions * p.observations));
    for (int a = 0; a < p.actions; ++a) {
      for (int z = 0; z < p.observations; ++z) {
        m.push_back(p.transition[static_cast<std::size_t>(a)] *
                    p.observation[static_cast<std::size_t>(a)].col(z).asDiagonal());
      }
    }
    beliefs.resize(p.states, static_cast<Eigen::Index>(bs.size()));
    for (std::size_t i = 0; i < bs.size(); ++i) beliefs.col(static_cast<Eigen::Index>(i)) = bs[i];
  }

  // One backed-up vector per belief column, built from the alpha set `gamma` (S x K).
  std::vector<AlphaVector> run(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& reward) const {
    const Eigen::Index nb = beliefs.cols();
    std::vector<AlphaVector> best(static_cast<std::size_t>(nb));
    Eigen::VectorXd best_val = Eigen::VectorXd::Constant(nb, -std::numeric_limits<double>::infinity());
    for (int a = 0; a < pomdp.actions; ++a) {
      Eigen::MatrixXd acc = reward.col(a).replicate(1, nb);  // S x B, candidate vector per belief
      for (int z = 0; z < pomdp.observations; ++z) {
        const Eigen::MatrixXd g = m[static_cast<std::size_t>(a * pomdp.observations + z)] * gamma;  // S x K
        const Eigen::MatrixXd scores = beliefs.transpose() * g;                                     // B x K
        for (Eigen::Index i = 0; i < nb; ++i) {
          Eigen::Index k = 0;
          scores.row(i).maxCoeff(&k);
          acc.col(i) += pomdp.discount * g.col(k);
        }
      }
      for (Eigen::Index i = 0; i < nb; ++i) {
        const double v = beliefs.col(i).dot(acc.col(i));
        if (v > best_val[i] + 1e-14) {
          best_val[i] = v;
          best[static_cast<std::size_t>(i)] = {acc.col(i), a};
        }
      }
    }
    return best;
  }
};

Eigen::MatrixXd stack(const std::vector<AlphaVector>& vs, int states) {
  Eigen::MatrixXd g(states, static_cast<Eigen::Index>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = vs[i].values;
  return g;
}

std::vector<AlphaVector> dedupe(const std::vector<AlphaVector>& vs) {
  std::vector<AlphaVector> out;
  for (const auto& v : vs) {
    bool dup = false;
    for (const auto& u : out) {
      if (u.action == v.action && (u.values - v.values).cwiseAbs().maxCoeff() <= 1e-13) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(v);
  }
  return out;
}

// Value of always taking action a: (I - gamma T_a)^-1 R_a. A valid lower bound.
AlphaVector blind_vector(const FinitePomdp& p, int a) {
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(p.states, p.states) - p.discount * p.transition[static_cast<std::size_t>(a)];
  return {lhs.partialPivLu().solve(p.reward.col(a)), a};
}

}  // namespace

AlphaPolicy solve(const FinitePomdp& pomdp, const Eigen::VectorXd& init_belief, const SolverOptions& options) {
  pomdp.validate();
  if (init_belief.size() != pomdp.states || std::abs(init_belief.sum() - 1.0) > 1e-9 || (init_belief.array() < 0).any()) {
    throw Error(ErrorCode::DegenerateBelief, "initial belief must be a distribution over the states");
  }
  const auto start = std::chrono::steady_clock::now();
  auto out_of_time = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > options.time_budget_s;
  };

  auto beliefs = reachable_beliefs(pomdp, init_belief, options);
  for (const auto& b : options.extra_beliefs) {
    if (b.size() != pomdp.states) throw Error(ErrorCode::DegenerateBelief, "extra belief has wrong dimension");
    beliefs.push_back(b);
  }
  const Backup backup(pomdp, beliefs);
  AlphaPolicy policy;

  if (options.horizon) {
    if (*options.horizon < 1) throw Error(ErrorCode::InvariantViolation, "horizon must be >= 1");
    const Eigen::MatrixXd& last = pomdp.final_reward.size() ? pomdp.final_reward : pomdp.reward;
    std::vector<AlphaVector> stage;
    for (int a = 0; a < pomdp.actions; ++a) stage.push_back({last.col(a), a});
    policy.vectors = stage;
    policy.value_trace.push_back(policy.value(init_belief));
    for (int h = 2; h <= *options.horizon; ++h) {
      if (out_of_time()) {
        policy.budget_exceeded = true;
        break;
      }
      stage = dedupe(backup.run(stack(stage, pomdp.states), pomdp.reward));
      policy.vectors = stage;
      policy.value_trace.push_back(policy.value(init_belief));
    }
    policy.iterations = static_cast<int>(policy.value_trace.size());
    return policy;
  }

  if (!(pomdp.discount < 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "stationary solve needs discount < 1 or a finite horizon");
  }
  std::vector<AlphaVector> gamma;
  for (int a = 0; a < pomdp.actions; ++a) gamma.push_back(blind_vector(pomdp, a));
  const Eigen::Index nb = backup.beliefs.cols();
  policy.vectors = gamma;
  policy.value_trace.push_back(policy.value(init_belief));

  bool converged = false;
  for (int it = 0; it < options.max_iterations; ++it) {
    if (out_of_time()) break;
    const Eigen::MatrixXd g = stack(gamma, pomdp.states);
    auto next = backup.run(g, pomdp.reward);
    // Keep the previous maximizer wherever the backup would lower the value.
    const Eigen::MatrixXd old_scores = backup.beliefs.transpose() * g;
    double delta = 0.0;
    for (Eigen::Index i = 0; i < nb; ++i) {
      const double v = backup.beliefs.col(i).dot(next[static_cast<std::size_t>(i)].values);
      Eigen::Index k = 0;
      const double old = old_scores.row(i).maxCoeff(&k);
      if (v < old) {
        next[static_cast<std::size_t>(i)] = gamma[static_cast<std::size_t>(k)];
      } else {
        delta = std::max(delta, v - old);
      }
    }
    gamma = dedupe(next);
    policy.vectors = gamma;
    policy.value_trace.push_back(policy.value(init_belief));
    policy.iterations = it + 1;
    if (delta <= options.tolerance) {
      converged = true;
      break;
    }
  }
  policy.budget_exceeded = !converged;
  return policy;
}

}  // namespace steproute
