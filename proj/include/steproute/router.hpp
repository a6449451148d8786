#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "steproute/pomdp.hpp"

namespace steproute {

/// Beliefs in which the planner is consulted. Band mode: P(S2) / max_s P(s)
/// within [lo, hi]. Always mode consults on every step.
struct TriggerBand {
  enum class Mode { Band, Always };
  Mode mode = Mode::Band;
  double lo = 0.35;
  double hi = 0.40;

  static TriggerBand always() { return {Mode::Always, 0.0, 1.0}; }
  bool contains(const Belief& b) const;
};

nlohmann::json to_json(const TriggerBand& band);
TriggerBand trigger_band_from_json(const nlohmann::json& j, const std::string& path = "trigger");

/// Actions on the simplex lattice {(i, j, k) / r : i + j + k = r}, ordered by (i, j).
struct LookupTable {
  int resolution = 0;
  std::vector<RoutingAction> actions;  // (r + 1)(r + 2) / 2 entries
  bool budget_exceeded = false;        // solver stopped early; actions are best-so-far

  static std::size_t cell_count(int resolution) {
    return static_cast<std::size_t>(resolution + 1) * static_cast<std::size_t>(resolution + 2) / 2;
  }
  std::size_t index(int i, int j) const;
  Eigen::Vector3d point(std::size_t index) const;
  /// Lattice index nearest to `b` (largest-remainder rounding).
  std::size_t nearest(const Eigen::Vector3d& b) const;
  RoutingAction lookup(const Eigen::Vector3d& b) const { return actions[nearest(b)]; }
};

/// One shared solve whose belief set holds the reachable beliefs plus a
/// support lattice (config.support_resolution, capped at `resolution`), then
/// the maximizing action at every lattice point of `resolution`.
LookupTable precompute_lookup(const PomdpSpec& spec, const DiscretizedObservation& obs, int resolution,
                              const RoutingSolverConfig& config = {});

nlohmann::json to_json(const LookupTable& table, const PomdpSpec& spec);
LookupTable lookup_table_from_json(const nlohmann::json& j);

/// Model pieces needed at decision time.
struct PomdpPlanner {
  PomdpSpec spec;
  std::shared_ptr<const ObservationLikelihood> likelihood;  // for belief updates
  std::shared_ptr<const DiscretizedObservation> grid;       // for fresh solves
  RoutingSolverConfig solver;
  std::optional<LookupTable> cache;
};

/// Inside the trigger band: act on the cached table if present, otherwise on a
/// fresh solve from `belief`. Outside the band: Continue.
RoutingAction decide_pomdp(const Belief& belief, const PomdpPlanner& planner, const TriggerBand& band);

/// Filters the belief through each weak candidate (and strong replacement) and
/// asks decide_pomdp on the post-candidate belief.
class PomdpRouter final : public Router {
 public:
  PomdpRouter(const PomdpPlanner& planner, TriggerBand band) : planner_(planner), band_(band) {}

  RoutingAction decide(const AggFeatures& candidate, const TraceState& prefix) override;
  void on_regenerated(const AggFeatures& strong_step) override;
  const Belief& belief() const { return belief_; }

 private:
  const PomdpPlanner& planner_;
  TriggerBand band_;
  Belief belief_;
  Belief pending_;
};

}  // namespace steproute
