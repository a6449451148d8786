#include "steproute/threshold.hpp"

#include <algorithm>
#include <cmath>

namespace steproute {

RoutingAction decide_threshold(const ThresholdPolicy& policy, const AggFeatures& feats, bool escalated_before) {
  if (policy.takeover && escalated_before) return RoutingAction::Regenerate;
  return feats.current_score < policy.k ? RoutingAction::Regenerate : RoutingAction::Continue;
}

RoutingAction ThresholdRouter::decide(const AggFeatures& feats, const TraceState&) {
  const auto action = decide_threshold(policy_, feats, escalated_);
  if (action == RoutingAction::Regenerate) escalated_ = true;
  return action;
}

int BinnedClassifier::bin_of(double score) const {
  const int b = static_cast<int>(std::floor(std::clamp(score, 0.0, 1.0) * n_bins));
  return std::min(b, n_bins - 1);
}

BinnedClassifier fit_automix_bins(const std::vector<CalibrationSample>& labeled, int n_bins) {
  if (labeled.empty()) throw Error(ErrorCode::EmptyDataset, "no calibration samples");
  if (n_bins < 1) throw Error(ErrorCode::ConfigError, "n_bins must be positive");
  BinnedClassifier clf;
  clf.n_bins = n_bins;
  std::vector<std::array<double, 3>> counts(n_bins, {0.0, 0.0, 0.0});
  std::array<double, 3> marginal{0.0, 0.0, 0.0};
  for (const auto& s : labeled) {
    const int c = static_cast<int>(s.outcome);
    counts[clf.bin_of(s.score)][c] += 1.0;
    marginal[c] += 1.0;
  }
  const double n = static_cast<double>(labeled.size());
  for (auto& m : marginal) m /= n;
  clf.bins.resize(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    const double total = counts[b][0] + counts[b][1] + counts[b][2];
    if (total == 0.0) {
      clf.bins[b] = marginal;
    } else {
      for (int c = 0; c < 3; ++c) clf.bins[b][c] = counts[b][c] / total;
    }
  }
  return clf;
}

RoutingAction decide_automix(const BinnedClassifier& clf, double score, double lambda, double expected_strong_tokens) {
  const double gain = clf.lookup(score)[static_cast<int>(OutcomeClass::SolvableOnlyByStrong)];
  return gain - lambda * expected_strong_tokens > 0.0 ? RoutingAction::Regenerate : RoutingAction::Continue;
}

std::vector<CalibrationSample> collect_automix_calibration(const EnvConfig& cfg, int episodes, std::uint64_t seed) {
  std::vector<CalibrationSample> out;
  const DecisionFn always_continue = [](const AggFeatures&, const TraceState&) { return RoutingAction::Continue; };
  for (int e = 0; e < episodes; ++e) {
    const auto ep_seed = episode_seed(seed, static_cast<std::uint64_t>(e));
    const auto result = run_episode(always_continue, cfg, 0.0, ep_seed);
    LatentClass prefix = LatentClass::S0;
    for (std::size_t t = 0; t < result.decisions.size(); ++t) {
      const auto& d = result.decisions[t];
      OutcomeClass outcome;
      if (d.candidate_class == LatentClass::S0) {
        outcome = OutcomeClass::SolvableByWeak;
      } else {
        const auto strong = strong_step_class(cfg, ep_seed, static_cast<int>(t) + 1, prefix);
        outcome = strong == LatentClass::S0 ? OutcomeClass::SolvableOnlyByStrong : OutcomeClass::UnsolvableByBoth;
      }
      out.push_back({d.features.current_score, outcome});
      prefix = result.latent_path[t];
    }
  }
  return out;
}

nlohmann::json to_json(const BinnedClassifier& clf) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : clf.bins) bins.push_back({b[0], b[1], b[2]});
  return {{"n_bins", clf.n_bins}, {"bins", bins}};
}

BinnedClassifier binned_classifier_from_json(const nlohmann::json& j) {
  if (!j.contains("n_bins") || !j["n_bins"].is_number_integer()) throw Error(ErrorCode::InvariantViolation, "n_bins");
  BinnedClassifier clf;
  clf.n_bins = j["n_bins"].get<int>();
  if (clf.n_bins < 1 || !j.contains("bins") || !j["bins"].is_array() ||
      static_cast<int>(j["bins"].size()) != clf.n_bins) {
    throw Error(ErrorCode::InvariantViolation, "bins");
  }
  for (const auto& row : j["bins"]) {
    if (!row.is_array() || row.size() != 3) throw Error(ErrorCode::InvariantViolation, "bins");
    std::array<double, 3> p{row[0].get<double>(), row[1].get<double>(), row[2].get<double>()};
    if (std::abs(p[0] + p[1] + p[2] - 1.0) > 1e-9) throw Error(ErrorCode::InvariantViolation, "bins");
    clf.bins.push_back(p);
  }
  return clf;
}

}  // namespace steproute
