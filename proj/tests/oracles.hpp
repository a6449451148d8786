#pragma once

// Reference computations that share no code with the library. Each one is
// deliberately naive: enumeration instead of recursion, hand tables instead of
// library transition functions.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Latent rows typed out by hand: index 0 = S0, 1 = S1, 2 = S2; action 0 =
// continue, 1 = regenerate. Survival-conditioned (no terminal column).
inline std::array<std::array<double, 3>, 3> latent_rows(int action, double p_w, double p_s) {
  if (action == 0) {
    return {{{p_w, 0.0, 1.0 - p_w}, {0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}}};
  }
  return {{{p_s, 0.0, 1.0 - p_s}, {0.0, 1.0, 0.0}, {p_s, 0.0, 1.0 - p_s}}};
}

// Posterior over the final class after observing emission weights
// `lik[t][s]` following actions `actions[t]`, by summing over all 3^(T+1)
// latent paths s_0 .. s_T.
inline std::array<double, 3> path_enumeration_posterior(const std::array<double, 3>& prior,
                                                        const std::vector<int>& actions,
                                                        const std::vector<std::array<double, 3>>& lik, double p_w,
                                                        double p_s) {
  const std::size_t steps = actions.size();
  std::size_t paths = 1;
  for (std::size_t i = 0; i <= steps; ++i) paths *= 3;
  std::array<double, 3> mass{0.0, 0.0, 0.0};
  for (std::size_t code = 0; code < paths; ++code) {
    std::vector<int> path(steps + 1);
    std::size_t c = code;
    for (std::size_t i = 0; i <= steps; ++i) {
      path[i] = static_cast<int>(c % 3);
      c /= 3;
    }
    double w = prior[static_cast<std::size_t>(path[0])];
    for (std::size_t t = 0; t < steps && w > 0.0; ++t) {
      const auto rows = latent_rows(actions[t], p_w, p_s);
      w *= rows[static_cast<std::size_t>(path[t])][static_cast<std::size_t>(path[t + 1])];
      w *= lik[t][static_cast<std::size_t>(path[t + 1])];
    }
    mass[static_cast<std::size_t>(path[steps])] += w;
  }
  const double z = mass[0] + mass[1] + mass[2];
  for (auto& m : mass) m /= z;
  return mass;
}

// Generic finite POMDP for the brute-force policy oracle.
struct ToyPomdp {
  int states = 0;
  int actions = 0;
  int observations = 0;
  std::vector<Eigen::MatrixXd> T;  // T[a](s, s')
  std::vector<Eigen::MatrixXd> O;  // O[a](s', z)
  Eigen::MatrixXd R;               // first-stage reward, S x A
  Eigen::MatrixXd Rf;              // second-stage reward, S x A
  double discount = 1.0;
};

// Best two-stage value over every deterministic policy (a1, z -> a2),
// each evaluated by summing over states, next states and observations.
inline double two_step_brute_force(const ToyPomdp& p, const Eigen::VectorXd& b0) {
  double best = -1e300;
  std::size_t second_choices = 1;
  for (int z = 0; z < p.observations; ++z) second_choices *= static_cast<std::size_t>(p.actions);
  for (int a1 = 0; a1 < p.actions; ++a1) {
    for (std::size_t code = 0; code < second_choices; ++code) {
      std::vector<int> a2(static_cast<std::size_t>(p.observations));
      std::size_t c = code;
      for (int z = 0; z < p.observations; ++z) {
        a2[static_cast<std::size_t>(z)] = static_cast<int>(c % static_cast<std::size_t>(p.actions));
        c /= static_cast<std::size_t>(p.actions);
      }
      double v = 0.0;
      for (int s = 0; s < p.states; ++s) {
        double inner = p.R(s, a1);
        for (int s2 = 0; s2 < p.states; ++s2) {
          for (int z = 0; z < p.observations; ++z) {
            inner += p.discount * p.T[a1](s, s2) * p.O[a1](s2, z) * p.Rf(s2, a2[static_cast<std::size_t>(z)]);
          }
        }
        v += b0[s] * inner;
      }
      best = std::max(best, v);
    }
  }
  return best;
}

// Midpoint-rule integral of f over [0,1]^2 on an n x n grid.
inline double quadrature(const std::function<double(double, double)>& f, int n = 200) {
  const double h = 1.0 / n;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) sum += f((i + 0.5) * h, (j + 0.5) * h);
  }
  return sum * h * h;
}

// AUC by counting every (positive, negative) pair; ties count half.
inline double pair_count_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double standard_error(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace oracle
