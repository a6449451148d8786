#pragma once

#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "steproute/trace.hpp"

namespace steproute {

struct SweepPoint {
  double control = 0.0;             // threshold k or lambda
  double mean_strong_tokens = 0.0;  // C-bar(pi)
  double normalized_cost = 0.0;     // sum C(q; pi) / sum C_s(q) over the same queries
  double accuracy = 0.0;            // r(pi)
  std::int64_t n_queries = 0;
};

struct TradeoffCurve {
  std::vector<SweepPoint> points;
  double r_weak = 0.0;
  double r_strong = 0.0;
  double mean_strong_only_tokens = 0.0;

  /// Sorts by cost and keeps, per cost, the most accurate point.
  void normalize();
};

/// Points not dominated by a cheaper-or-equal, at-least-as-accurate point,
/// sorted by cost with strictly increasing accuracy.
std::vector<SweepPoint> pareto_staircase(const std::vector<SweepPoint>& points);

/// (r_pi - r_weak) / (r_strong - r_weak). Throws DegenerateGap when the endpoints coincide.
double pgr(double r_pi, double r_weak, double r_strong);

struct CostAt {
  double cost_abs = 0.0;
  double cost_norm = 0.0;
};

/// Cheapest cost at which the linearly interpolated staircase reaches PGR x.
/// Targets below the first point clamp to its cost. Throws Unreachable or EmptyCurve.
CostAt cpt(const TradeoffCurve& curve, double x);

enum class IbcRegioning { Accuracy, Cost };

struct IbcResult {
  std::optional<double> mean_delta;  // empty when no target is reachable
  int reachable = 0;
  int unreachable = 0;
};

/// Mean relative IBC gain over 100 equally spaced targets strictly inside the
/// gap (accuracy targets by default, cost targets otherwise). The curve is
/// anchored at the weak-only operating point (0, r_weak).
IbcResult ibc_detail(const TradeoffCurve& curve, IbcRegioning regioning = IbcRegioning::Accuracy, int regions = 100);
/// mean_delta of ibc_detail; throws Unreachable when no target is reachable.
double ibc_delta(const TradeoffCurve& curve, IbcRegioning regioning = IbcRegioning::Accuracy);

/// Best interpolated accuracy with normalized cost <= budget, anchored at
/// (0, r_weak); returns (accuracy, pgr).
std::pair<double, double> budgeted_accuracy(const TradeoffCurve& curve, double budget_norm);

struct ScoredOutcome {
  double min_score = 1.0;
  bool correct = false;
};

/// ROC AUC of the minimum step score as a predictor of final correctness; ties count half.
double min_score_auc(const std::vector<ScoredOutcome>& rows);
double min_score_auc(const std::vector<TraceState>& traces, const std::vector<bool>& final_correct);
/// Minimum score over the steps of a trace (1.0 when empty).
double min_step_score(const TraceState& trace);

void write_curve_csv(std::ostream& out, const std::vector<SweepPoint>& points);
std::vector<SweepPoint> read_curve_csv(std::istream& in);

/// Curve endpoints sidecar: {r_weak, r_strong, mean_strong_only_tokens}.
nlohmann::json endpoints_to_json(const TradeoffCurve& curve);
void endpoints_from_json(const nlohmann::json& j, TradeoffCurve& curve);

/// {pgr_endpoints, cpt:{50,80,95}, ibc_delta, budgeted:{10,15,20,25,30}}; unreachable entries are null.
nlohmann::json metric_report(const TradeoffCurve& curve, IbcRegioning regioning = IbcRegioning::Accuracy);

/// Fixed-format number for byte-stable text output.
std::string format_number(double v);

}  // namespace steproute
