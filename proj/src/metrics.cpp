#include "steproute/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace steproute {

namespace {

void require_nonempty(const TradeoffCurve& curve) {
  if (curve.points.empty()) throw Error(ErrorCode::EmptyCurve, "curve has no points");
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Staircase with the weak-only operating point prepended when it is not dominated.
std::vector<SweepPoint> anchored(const TradeoffCurve& curve) {
  std::vector<SweepPoint> pts = curve.points;
  pts.push_back({0.0, 0.0, 0.0, curve.r_weak, 0});
  return pareto_staircase(pts);
}

// Cheapest interpolated cost reaching accuracy `target` on a staircase; empty if unreachable.
std::optional<CostAt> cost_for_accuracy(const std::vector<SweepPoint>& stairs, double target) {
  if (stairs.empty() || stairs.back().accuracy < target) return std::nullopt;
  if (stairs.front().accuracy >= target) return CostAt{stairs.front().mean_strong_tokens, stairs.front().normalized_cost};
  for (std::size_t i = 1; i < stairs.size(); ++i) {
    const auto& lo = stairs[i - 1];
    const auto& hi = stairs[i];
    if (hi.accuracy >= target) {
      const double t = (target - lo.accuracy) / (hi.accuracy - lo.accuracy);
      return CostAt{lerp(lo.mean_strong_tokens, hi.mean_strong_tokens, t), lerp(lo.normalized_cost, hi.normalized_cost, t)};
    }
  }
  return std::nullopt;
}

// Interpolated accuracy at a cost on a staircase (right-clamped); `norm` selects the cost column.
double accuracy_at_cost(const std::vector<SweepPoint>& stairs, double cost, bool norm) {
  auto c = [norm](const SweepPoint& p) { return norm ? p.normalized_cost : p.mean_strong_tokens; };
  double best = stairs.front().accuracy;
  for (std::size_t i = 0; i < stairs.size(); ++i) {
    if (c(stairs[i]) <= cost) {
      best = stairs[i].accuracy;
      continue;
    }
    if (i > 0) {
      const auto& lo = stairs[i - 1];
      const auto& hi = stairs[i];
      best = lerp(lo.accuracy, hi.accuracy, (cost - c(lo)) / (c(hi) - c(lo)));
    }
    break;
  }
  return best;
}

}  // namespace

void TradeoffCurve::normalize() {
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return a.mean_strong_tokens < b.mean_strong_tokens;
  });
  std::vector<SweepPoint> out;
  for (const auto& p : points) {
    if (!out.empty() && out.back().mean_strong_tokens == p.mean_strong_tokens) {
      if (p.accuracy > out.back().accuracy) out.back() = p;
    } else {
      out.push_back(p);
    }
  }
  points = std::move(out);
}

std::vector<SweepPoint> pareto_staircase(const std::vector<SweepPoint>& points) {
  std::vector<SweepPoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(), [](const SweepPoint& a, const SweepPoint& b) {
    if (a.mean_strong_tokens != b.mean_strong_tokens) return a.mean_strong_tokens < b.mean_strong_tokens;
    return a.accuracy > b.accuracy;
  });
  std::vector<SweepPoint> out;
  for (const auto& p : sorted) {
    if (out.empty() || p.accuracy > out.back().accuracy) {
      if (!out.empty() && out.back().mean_strong_tokens == p.mean_strong_tokens) continue;
      out.push_back(p);
    }
  }
  return out;
}

double pgr(double r_pi, double r_weak, double r_strong) {
  if (r_strong == r_weak) throw Error(ErrorCode::DegenerateGap, "r_strong equals r_weak");
  return (r_pi - r_weak) / (r_strong - r_weak);
}

CostAt cpt(const TradeoffCurve& curve, double x) {
  require_nonempty(curve);
  const double gap = curve.r_strong - curve.r_weak;
  if (gap == 0.0) throw Error(ErrorCode::DegenerateGap, "r_strong equals r_weak");
  const auto stairs = pareto_staircase(curve.points);
  const auto hit = cost_for_accuracy(stairs, curve.r_weak + x * gap);
  if (!hit) throw Error(ErrorCode::Unreachable, "PGR " + format_number(x) + " not reached");
  return *hit;
}

IbcResult ibc_detail(const TradeoffCurve& curve, IbcRegioning regioning, int regions) {
  require_nonempty(curve);
  const double gap = curve.r_strong - curve.r_weak;
  if (!(gap > 0.0)) throw Error(ErrorCode::DegenerateGap, "need r_strong > r_weak");
  if (!(curve.mean_strong_only_tokens > 0.0)) throw Error(ErrorCode::DegenerateGap, "strong-only cost must be positive");
  const double base = gap / curve.mean_strong_only_tokens;
  const auto stairs = anchored(curve);
  IbcResult out;
  double sum = 0.0;
  for (int j = 1; j <= regions; ++j) {
    const double frac = static_cast<double>(j) / (regions + 1);
    double gain = 0.0;
    double cost = 0.0;
    if (regioning == IbcRegioning::Accuracy) {
      const auto hit = cost_for_accuracy(stairs, curve.r_weak + frac * gap);
      if (!hit || !(hit->cost_abs > 0.0)) {
        ++out.unreachable;
        continue;
      }
      gain = frac * gap;
      cost = hit->cost_abs;
    } else {
      cost = frac * curve.mean_strong_only_tokens;
      gain = accuracy_at_cost(stairs, cost, false) - curve.r_weak;
    }
    sum += (gain / cost - base) / base;
    ++out.reachable;
  }
  if (out.reachable > 0) out.mean_delta = sum / out.reachable;
  return out;
}

double ibc_delta(const TradeoffCurve& curve, IbcRegioning regioning) {
  const auto r = ibc_detail(curve, regioning);
  if (!r.mean_delta) throw Error(ErrorCode::Unreachable, "no IBC target reachable");
  return *r.mean_delta;
}

std::pair<double, double> budgeted_accuracy(const TradeoffCurve& curve, double budget_norm) {
  require_nonempty(curve);
  if (!(budget_norm >= 0.0)) throw Error(ErrorCode::OutOfDomain, "budget must be >= 0");
  const double acc = accuracy_at_cost(anchored(curve), budget_norm, true);
  return {acc, pgr(acc, curve.r_weak, curve.r_strong)};
}

double min_score_auc(const std::vector<ScoredOutcome>& rows) {
  std::vector<ScoredOutcome> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.min_score < b.min_score; });
  std::int64_t pos = 0, neg = 0;
  double rank_sum = 0.0;  // ranks of positives, ties share the mean rank
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].min_score == sorted[i].min_score) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (sorted[k].correct) {
        ++pos;
        rank_sum += mean_rank;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw Error(ErrorCode::SingleClass, "need correct and incorrect traces");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(neg));
}

double min_step_score(const TraceState& trace) {
  double m = 1.0;
  for (const auto& s : trace.steps()) m = std::min(m, s.score);
  return m;
}

double min_score_auc(const std::vector<TraceState>& traces, const std::vector<bool>& final_correct) {
  if (traces.size() != final_correct.size()) throw Error(ErrorCode::LengthMismatch, "one label per trace");
  std::vector<ScoredOutcome> rows;
  rows.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) rows.push_back({min_step_score(traces[i]), final_correct[i]});
  return min_score_auc(rows);
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_curve_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "control,mean_strong_tokens,normalized_cost,accuracy,n_queries\n";
  for (const auto& p : points) {
    out << format_number(p.control) << ',' << format_number(p.mean_strong_tokens) << ','
        << format_number(p.normalized_cost) << ',' << format_number(p.accuracy) << ',' << p.n_queries << '\n';
  }
}

std::vector<SweepPoint> read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "curve CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "control,mean_strong_tokens,normalized_cost,accuracy,n_queries") {
    throw Error(ErrorCode::ParseError, "curve CSV: unexpected header '" + line + "'");
  }
  std::vector<SweepPoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw Error(ErrorCode::ParseError, "curve CSV line " + std::to_string(line_no) + ": expected 5 columns");
    try {
      SweepPoint p{std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stoll(cells[4])};
      if (!(p.accuracy >= 0 && p.accuracy <= 1) || p.mean_strong_tokens < 0 || p.n_queries < 1) {
        throw Error(ErrorCode::InvariantViolation, "curve CSV line " + std::to_string(line_no) + ": value out of range");
      }
      points.push_back(p);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, "curve CSV line " + std::to_string(line_no) + ": not a number");
    }
  }
  return points;
}

nlohmann::json endpoints_to_json(const TradeoffCurve& curve) {
  return {{"r_weak", curve.r_weak}, {"r_strong", curve.r_strong}, {"mean_strong_only_tokens", curve.mean_strong_only_tokens}};
}

void endpoints_from_json(const nlohmann::json& j, TradeoffCurve& curve) {
  try {
    curve.r_weak = j.at("r_weak").get<double>();
    curve.r_strong = j.at("r_strong").get<double>();
    curve.mean_strong_only_tokens = j.at("mean_strong_only_tokens").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("curve endpoints: ") + e.what());
  }
}

nlohmann::json metric_report(const TradeoffCurve& curve, IbcRegioning regioning) {
  nlohmann::json report;
  report["pgr_endpoints"] = {{"r_weak", curve.r_weak}, {"r_strong", curve.r_strong}};
  report["interpolation"] = "linear";
  nlohmann::json cpt_j = nlohmann::json::object();
  for (int x : {50, 80, 95}) {
    try {
      const auto c = cpt(curve, x / 100.0);
      cpt_j[std::to_string(x)] = {{"cost_abs", c.cost_abs}, {"cost_norm", c.cost_norm}};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unreachable) throw;
      cpt_j[std::to_string(x)] = nullptr;
    }
  }
  report["cpt"] = cpt_j;
  const auto ibc = ibc_detail(curve, regioning);
  report["ibc_delta"] = ibc.mean_delta ? nlohmann::json(*ibc.mean_delta) : nlohmann::json(nullptr);
  report["ibc_regioning"] = regioning == IbcRegioning::Accuracy ? "accuracy" : "cost";
  report["ibc_unreachable_targets"] = ibc.unreachable;
  nlohmann::json budget_j = nlohmann::json::object();
  for (int b : {10, 15, 20, 25, 30}) {
    const auto [acc, g] = budgeted_accuracy(curve, b / 100.0);
    budget_j[std::to_string(b)] = {{"accuracy", acc}, {"pgr", g}};
  }
  report["budgeted"] = budget_j;
  return report;
}

}  // namespace steproute
