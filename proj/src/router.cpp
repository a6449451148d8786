#include "steproute/router.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace steproute {

bool TriggerBand::contains(const Belief& b) const {
  if (mode == Mode::Always) return true;
  const double top = b.probs.maxCoeff();
  if (!(top > 0)) return false;
  const double ratio = b.probs[2] / top;
  return ratio >= lo && ratio <= hi;
}

nlohmann::json to_json(const TriggerBand& band) {
  if (band.mode == TriggerBand::Mode::Always) return {{"mode", "always"}};
  return {{"mode", "band"}, {"lo", band.lo}, {"hi", band.hi}};
}

TriggerBand trigger_band_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, path + ": expected an object");
  const auto mode = j.value("mode", std::string("band"));
  if (mode == "always") return TriggerBand::always();
  if (mode != "band") throw Error(ErrorCode::ConfigError, path + ".mode: expected 'band' or 'always'");
  TriggerBand band;
  for (const char* key : {"lo", "hi"}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_number()) throw Error(ErrorCode::ConfigError, path + "." + key + ": expected a number");
  }
  band.lo = j.value("lo", band.lo);
  band.hi = j.value("hi", band.hi);
  if (!(band.lo >= 0 && band.lo <= band.hi && band.hi <= 1)) {
    throw Error(ErrorCode::ConfigError, path + ": need 0 <= lo <= hi <= 1");
  }
  return band;
}

std::size_t LookupTable::index(int i, int j) const {
  // Rows i = 0..r hold r - i + 1 entries each.
  const auto r = static_cast<std::size_t>(resolution);
  const auto ii = static_cast<std::size_t>(i);
  return ii * (r + 1) - ii * (ii - 1) / 2 + static_cast<std::size_t>(j);
}

Eigen::Vector3d LookupTable::point(std::size_t idx) const {
  for (int i = 0; i <= resolution; ++i) {
    const std::size_t row = index(i, 0);
    const std::size_t len = static_cast<std::size_t>(resolution - i + 1);
    if (idx < row + len) {
      const int j = static_cast<int>(idx - row);
      const double r = resolution;
      return {i / r, j / r, (resolution - i - j) / r};
    }
  }
  throw Error(ErrorCode::OutOfDomain, "lookup index out of range");
}

std::size_t LookupTable::nearest(const Eigen::Vector3d& b) const {
  std::array<double, 3> scaled{};
  std::array<int, 3> base{};
  int used = 0;
  for (int k = 0; k < 3; ++k) {
    scaled[k] = std::max(0.0, b[k]) * resolution;
    base[k] = static_cast<int>(std::floor(scaled[k]));
    used += base[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int c) { return scaled[a] - base[a] > scaled[c] - base[c]; });
  for (int k = 0; used < resolution; k = (k + 1) % 3, ++used) ++base[order[k]];
  for (int k = 2; used > resolution; k = (k + 2) % 3) {
    if (base[order[k]] > 0) {
      --base[order[k]];
      --used;
    }
  }
  return index(base[0], base[1]);
}

LookupTable precompute_lookup(const PomdpSpec& spec, const DiscretizedObservation& obs, int resolution,
                              const RoutingSolverConfig& config) {
  if (resolution < 2) throw Error(ErrorCode::ConfigError, "lookup resolution must be >= 2");
  LookupTable table;
  table.resolution = resolution;
  const std::size_t n = LookupTable::cell_count(resolution);
  RoutingSolverConfig cfg = config;
  LookupTable support;
  support.resolution = std::min(resolution, std::max(1, config.support_resolution));
  for (std::size_t i = 0; i < LookupTable::cell_count(support.resolution); ++i) {
    cfg.solver.extra_beliefs.emplace_back(support.point(i));
  }
  const auto policy = solve_routing(spec, obs, Belief{}, cfg);
  table.budget_exceeded = policy.budget_exceeded;
  table.actions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) table.actions.push_back(routing_action(policy.action(table.point(i))));
  return table;
}

nlohmann::json to_json(const LookupTable& table, const PomdpSpec& spec) {
  std::string acts;
  acts.reserve(table.actions.size());
  for (auto a : table.actions) acts.push_back(a == RoutingAction::Continue ? 'C' : 'R');
  return {{"format", "steproute-pomdp-lookup"},
          {"version", 1},
          {"resolution", table.resolution},
          {"budget_exceeded", table.budget_exceeded},
          {"spec", to_json(spec)},
          {"actions", acts}};
}

LookupTable lookup_table_from_json(const nlohmann::json& j) {
  LookupTable table;
  try {
    table.resolution = j.at("resolution").get<int>();
    const auto acts = j.at("actions").get<std::string>();
    table.budget_exceeded = j.value("budget_exceeded", false);
    if (table.resolution < 1 || acts.size() != LookupTable::cell_count(table.resolution)) {
      throw Error(ErrorCode::InvariantViolation, "lookup: action count does not match resolution");
    }
    for (char c : acts) {
      if (c != 'C' && c != 'R') throw Error(ErrorCode::InvariantViolation, "lookup: actions must be C or R");
      table.actions.push_back(c == 'C' ? RoutingAction::Continue : RoutingAction::Regenerate);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("lookup: ") + e.what());
  }
  return table;
}

RoutingAction decide_pomdp(const Belief& belief, const PomdpPlanner& planner, const TriggerBand& band) {
  if (!band.contains(belief)) return RoutingAction::Continue;
  if (planner.cache) return planner.cache->lookup(belief.probs);
  if (!planner.grid) throw Error(ErrorCode::InvariantViolation, "planner has neither a lookup table nor a grid");
  return routing_action(solve_routing(planner.spec, *planner.grid, belief, planner.solver).action(belief.probs));
}

RoutingAction PomdpRouter::decide(const AggFeatures& candidate, const TraceState&) {
  const Observation obs{candidate.min_prev_score, candidate.current_score};
  pending_ = belief_update(belief_, RoutingAction::Continue, obs, planner_.spec, *planner_.likelihood);
  const auto action = decide_pomdp(pending_, planner_, band_);
  if (action == RoutingAction::Continue) belief_ = pending_;
  return action;
}

void PomdpRouter::on_regenerated(const AggFeatures& strong_step) {
  const Observation obs{strong_step.min_prev_score, strong_step.current_score};
  belief_ = belief_update(pending_, RoutingAction::Regenerate, obs, planner_.spec, *planner_.likelihood);
  belief_.step_index = pending_.step_index;  // the replacement occupies the same step
}

}  // namespace steproute
