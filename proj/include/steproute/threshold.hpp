#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "steproute/sim.hpp"
#include "steproute/trace.hpp"

namespace steproute {

/// Myopic threshold router. With `takeover` set, the strong model keeps every
/// remaining step once it has been called in (full-takeover ablation).
struct ThresholdPolicy {
  double k = 0.5;
  bool takeover = false;
};

/// Regenerate iff current_score < k (strict), or unconditionally after a
/// previous escalation when `takeover` is set.
RoutingAction decide_threshold(const ThresholdPolicy& policy, const AggFeatures& feats, bool escalated_before);

class ThresholdRouter final : public Router {
 public:
  explicit ThresholdRouter(ThresholdPolicy policy) : policy_(policy) {}
  RoutingAction decide(const AggFeatures& feats, const TraceState& prefix) override;

 private:
  ThresholdPolicy policy_;
  bool escalated_ = false;
};

enum class OutcomeClass { SolvableByWeak = 0, UnsolvableByBoth = 1, SolvableOnlyByStrong = 2 };

/// Per-bin conditional distribution over the three outcome classes on a uniform
/// partition of [0,1].
struct BinnedClassifier {
  int n_bins = 10;
  std::vector<std::array<double, 3>> bins;

  int bin_of(double score) const;
  const std::array<double, 3>& lookup(double score) const { return bins[bin_of(score)]; }
};

struct CalibrationSample {
  double score = 0.0;
  OutcomeClass outcome = OutcomeClass::SolvableByWeak;
};

/// Empty bins inherit the dataset marginal.
BinnedClassifier fit_automix_bins(const std::vector<CalibrationSample>& labeled, int n_bins = 10);

/// Greedy single-step rule: Regenerate iff P(solvable only by strong) > lambda * expected_strong_tokens.
RoutingAction decide_automix(const BinnedClassifier& clf, double score, double lambda, double expected_strong_tokens);

class AutomixRouter final : public Router {
 public:
  AutomixRouter(const BinnedClassifier& clf, double lambda, double expected_strong_tokens)
      : clf_(clf), lambda_(lambda), expected_strong_tokens_(expected_strong_tokens) {}
  RoutingAction decide(const AggFeatures& feats, const TraceState&) override {
    return decide_automix(clf_, feats.current_score, lambda_, expected_strong_tokens_);
  }

 private:
  const BinnedClassifier& clf_;
  double lambda_;
  double expected_strong_tokens_;
};

/// Step-level calibration set from the simulator: each weak candidate's score
/// labelled with whether the weak step, the strong replacement, or neither is correct.
std::vector<CalibrationSample> collect_automix_calibration(const EnvConfig& cfg, int episodes, std::uint64_t seed);

nlohmann::json to_json(const BinnedClassifier& clf);
BinnedClassifier binned_classifier_from_json(const nlohmann::json& j);

}  // namespace steproute
