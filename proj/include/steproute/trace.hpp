#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steproute/error.hpp"

namespace steproute {

inline constexpr int kDefaultMaxSteps = 30;

enum class Origin { Weak, Strong };
enum class StepTruth { Correct, Incorrect };
enum class RoutingAction { Continue, Regenerate };

const char* to_string(Origin o);
const char* to_string(RoutingAction a);

struct StepRecord {
  double score = 1.0;
  std::int64_t token_count = 1;
  Origin origin = Origin::Weak;
  std::optional<StepTruth> truth;
};

/// Throws InvariantViolation naming the offending field.
void validate(const StepRecord& step);

/// A query-rooted prefix of accepted steps. Value type: append_step returns a
/// new trace and leaves its argument untouched.
class TraceState {
 public:
  TraceState() = default;
  explicit TraceState(std::string query_id, int max_steps = kDefaultMaxSteps)
      : query_id_(std::move(query_id)), max_steps_(max_steps) {}

  const std::string& query_id() const noexcept { return query_id_; }
  const std::vector<StepRecord>& steps() const noexcept { return steps_; }
  bool terminated() const noexcept { return terminated_; }
  int step_index() const noexcept { return static_cast<int>(steps_.size()); }
  int max_steps() const noexcept { return max_steps_; }

  TraceState terminate() const;

  friend TraceState append_step(const TraceState& trace, const StepRecord& step);
  friend TraceState trace_from_parts(std::string, std::vector<StepRecord>, bool, int);

 private:
  std::string query_id_;
  std::vector<StepRecord> steps_;
  bool terminated_ = false;
  int max_steps_ = kDefaultMaxSteps;
};

TraceState append_step(const TraceState& trace, const StepRecord& step);

/// Builds a trace from stored parts, checking every invariant.
TraceState trace_from_parts(std::string query_id, std::vector<StepRecord> steps, bool terminated,
                            int max_steps = kDefaultMaxSteps);

/// Reduced observation (r_t, min r_{1:t-1}, c_t, t).
struct AggFeatures {
  double current_score = 1.0;
  double min_prev_score = 1.0;
  std::int64_t current_tokens = 0;
  int step_index = 1;
};

AggFeatures aggregate_features(const TraceState& trace);

/// Same reduction, for a candidate step that has not been appended yet.
AggFeatures candidate_features(const TraceState& accepted_prefix, const StepRecord& candidate);

struct CostLedger {
  std::int64_t strong_tokens = 0;
  std::int64_t weak_tokens = 0;
  std::int64_t regenerate_count = 0;

  void charge_strong(std::int64_t tokens) {
    strong_tokens += tokens;
    ++regenerate_count;
  }
  void charge_weak(std::int64_t tokens) { weak_tokens += tokens; }
};

// JSONL interchange: {"query_id", "steps": [{score, tokens, origin, truth?}], "terminated"}
nlohmann::json to_json(const TraceState& trace);
TraceState trace_from_json(const nlohmann::json& j, int max_steps = kDefaultMaxSteps);

void write_jsonl(std::ostream& out, const std::vector<TraceState>& traces);
std::vector<TraceState> read_jsonl(std::istream& in, int max_steps = kDefaultMaxSteps);

}  // namespace steproute
