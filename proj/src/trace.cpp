#include "steproute/trace.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace steproute {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AppendAfterTermination: return "AppendAfterTermination";
    case ErrorCode::MaxStepsExceeded: return "MaxStepsExceeded";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::SteppedTerminal: return "SteppedTerminal";
    case ErrorCode::PolicyFailure: return "PolicyFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::DegenerateBelief: return "DegenerateBelief";
    case ErrorCode::SolverBudgetExceeded: return "SolverBudgetExceeded";
    case ErrorCode::NoSamples: return "NoSamples";
    case ErrorCode::DegenerateGap: return "DegenerateGap";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::EmptyCurve: return "EmptyCurve";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

const char* to_string(Origin o) { return o == Origin::Weak ? "weak" : "strong"; }
const char* to_string(RoutingAction a) { return a == RoutingAction::Continue ? "continue" : "regenerate"; }

void validate(const StepRecord& step) {
  if (!(step.score >= 0.0 && step.score <= 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "score");
  }
  if (step.token_count < 1) {
    throw Error(ErrorCode::InvariantViolation, "tokens");
  }
}

TraceState TraceState::terminate() const {
  TraceState out = *this;
  out.terminated_ = true;
  return out;
}

TraceState append_step(const TraceState& trace, const StepRecord& step) {
  if (trace.terminated_) {
    throw Error(ErrorCode::AppendAfterTermination, "trace '" + trace.query_id_ + "' is terminated");
  }
  if (trace.step_index() >= trace.max_steps_) {
    throw Error(ErrorCode::MaxStepsExceeded,
                "trace '" + trace.query_id_ + "' already holds " + std::to_string(trace.max_steps_) + " steps");
  }
  validate(step);
  TraceState out = trace;
  out.steps_.push_back(step);
  return out;
}

TraceState trace_from_parts(std::string query_id, std::vector<StepRecord> steps, bool terminated, int max_steps) {
  if (static_cast<int>(steps.size()) > max_steps) {
    throw Error(ErrorCode::InvariantViolation, "steps");
  }
  for (const auto& s : steps) validate(s);
  TraceState out(std::move(query_id), max_steps);
  out.steps_ = std::move(steps);
  out.terminated_ = terminated;
  return out;
}

AggFeatures aggregate_features(const TraceState& trace) {
  const auto& steps = trace.steps();
  if (steps.empty()) {
    throw Error(ErrorCode::EmptyTrace, "trace '" + trace.query_id() + "' has no steps");
  }
  AggFeatures f;
  f.current_score = steps.back().score;
  f.current_tokens = steps.back().token_count;
  f.step_index = static_cast<int>(steps.size());
  f.min_prev_score = 1.0;
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    f.min_prev_score = std::min(f.min_prev_score, steps[i].score);
  }
  return f;
}

AggFeatures candidate_features(const TraceState& accepted_prefix, const StepRecord& candidate) {
  AggFeatures f;
  f.current_score = candidate.score;
  f.current_tokens = candidate.token_count;
  f.step_index = accepted_prefix.step_index() + 1;
  f.min_prev_score = 1.0;
  for (const auto& s : accepted_prefix.steps()) f.min_prev_score = std::min(f.min_prev_score, s.score);
  return f;
}

nlohmann::json to_json(const TraceState& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps()) {
    nlohmann::json js = {{"score", s.score}, {"tokens", s.token_count}, {"origin", to_string(s.origin)}};
    if (s.truth) js["truth"] = *s.truth == StepTruth::Correct ? "correct" : "incorrect";
    steps.push_back(std::move(js));
  }
  return {{"query_id", trace.query_id()}, {"steps", std::move(steps)}, {"terminated", trace.terminated()}};
}

namespace {

template <typename T>
T required(const nlohmann::json& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) throw Error(ErrorCode::InvariantViolation, field);
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvariantViolation, field);
  }
}

}  // namespace

TraceState trace_from_json(const nlohmann::json& j, int max_steps) {
  auto query_id = required<std::string>(j, "query_id");
  auto terminated = required<bool>(j, "terminated");
  if (!j.contains("steps") || !j["steps"].is_array()) throw Error(ErrorCode::InvariantViolation, "steps");
  std::vector<StepRecord> steps;
  for (const auto& js : j["steps"]) {
    StepRecord s;
    s.score = required<double>(js, "score");
    if (!js.contains("tokens") || !js["tokens"].is_number_integer()) throw Error(ErrorCode::InvariantViolation, "tokens");
    s.token_count = js["tokens"].get<std::int64_t>();
    auto origin = required<std::string>(js, "origin");
    if (origin == "weak") {
      s.origin = Origin::Weak;
    } else if (origin == "strong") {
      s.origin = Origin::Strong;
    } else {
      throw Error(ErrorCode::InvariantViolation, "origin");
    }
    if (js.contains("truth") && !js["truth"].is_null()) {
      auto truth = required<std::string>(js, "truth");
      if (truth == "correct") {
        s.truth = StepTruth::Correct;
      } else if (truth == "incorrect") {
        s.truth = StepTruth::Incorrect;
      } else {
        throw Error(ErrorCode::InvariantViolation, "truth");
      }
    }
    validate(s);
    steps.push_back(s);
  }
  return trace_from_parts(std::move(query_id), std::move(steps), terminated, max_steps);
}

void write_jsonl(std::ostream& out, const std::vector<TraceState>& traces) {
  for (const auto& t : traces) out << to_json(t).dump() << '\n';
}

std::vector<TraceState> read_jsonl(std::istream& in, int max_steps) {
  std::vector<TraceState> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      out.push_back(trace_from_json(j, max_steps));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InvariantViolation) throw;
      throw Error(ErrorCode::InvariantViolation, e.detail() + " (line " + std::to_string(line_no) + ")");
    }
  }
  return out;
}

}  // namespace steproute
