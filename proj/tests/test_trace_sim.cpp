#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <unistd.h>

#include "oracles.hpp"
#include "steproute/sim.hpp"
#include "steproute/trace.hpp"

using namespace steproute;

namespace {

StepRecord step(double score, std::int64_t tokens, Origin origin = Origin::Weak) {
  StepRecord s;
  s.score = score;
  s.token_count = tokens;
  s.origin = origin;
  return s;
}

TraceState trace_of(const std::vector<double>& scores, const std::vector<std::int64_t>& tokens) {
  TraceState t("q");
  for (std::size_t i = 0; i < scores.size(); ++i) t = append_step(t, step(scores[i], tokens[i]));
  return t;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

std::string fixture(const char* name) { return std::string(STEPROUTE_FIXTURES) + "/" + name; }

std::string write_temp(const std::string& body) {
  static int counter = 0;
  auto path = std::filesystem::temp_directory_path() /
              ("steproute_trace_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".jsonl");
  std::ofstream(path) << body;
  return path.string();
}

RoutingAction always(RoutingAction a) { return a; }

}  // namespace

// ---- trace-core ----

TEST(AppendStep, EmptyTracePlusStepHasIndexOne) {
  const TraceState empty("q");
  const auto t = append_step(empty, step(0.9, 12));
  EXPECT_EQ(t.step_index(), 1);
  EXPECT_EQ(t.steps()[0].token_count, 12);
}

TEST(AppendStep, FullTraceRejectsStep) {
  TraceState t("q");
  for (int i = 0; i < 30; ++i) t = append_step(t, step(0.5, 1));
  EXPECT_EQ(t.step_index(), 30);
  EXPECT_EQ(code_of([&] { append_step(t, step(0.5, 1)); }), ErrorCode::MaxStepsExceeded);
}

TEST(AppendStep, TerminatedTraceRejectsStep) {
  const auto t = append_step(TraceState("q"), step(0.5, 3)).terminate();
  EXPECT_EQ(code_of([&] { append_step(t, step(0.5, 1)); }), ErrorCode::AppendAfterTermination);
}

TEST(AppendStep, LeavesInputUntouched) {
  const auto a = trace_of({0.9, 0.4}, {12, 30});
  const auto before = to_json(a).dump();
  const auto b = append_step(a, step(0.7, 18));
  EXPECT_EQ(to_json(a).dump(), before);
  EXPECT_EQ(a.step_index(), 2);
  EXPECT_EQ(b.step_index(), 3);
}

TEST(AppendStep, RejectsOutOfRangeFields) {
  const TraceState t("q");
  EXPECT_EQ(code_of([&] { append_step(t, step(1.5, 3)); }), ErrorCode::InvariantViolation);
  EXPECT_EQ(code_of([&] { append_step(t, step(0.5, 0)); }), ErrorCode::InvariantViolation);
}

TEST(AggregateFeatures, ThreeStepExample) {
  const auto f = aggregate_features(trace_of({0.9, 0.4, 0.7}, {12, 30, 18}));
  EXPECT_EQ(f.current_score, 0.7);
  EXPECT_EQ(f.min_prev_score, 0.4);
  EXPECT_EQ(f.current_tokens, 18);
  EXPECT_EQ(f.step_index, 3);
}

TEST(AggregateFeatures, SingleStepUsesVacuousMinimum) {
  const auto f = aggregate_features(trace_of({0.8}, {25}));
  EXPECT_EQ(f.current_score, 0.8);
  EXPECT_EQ(f.min_prev_score, 1.0);
  EXPECT_EQ(f.current_tokens, 25);
  EXPECT_EQ(f.step_index, 1);
}

TEST(AggregateFeatures, ConstantSequence) {
  const auto f = aggregate_features(trace_of({0.5, 0.5}, {10, 10}));
  EXPECT_EQ(f.current_score, 0.5);
  EXPECT_EQ(f.min_prev_score, 0.5);
  EXPECT_EQ(f.current_tokens, 10);
  EXPECT_EQ(f.step_index, 2);
}

TEST(AggregateFeatures, EmptyTraceFails) {
  EXPECT_EQ(code_of([] { aggregate_features(TraceState("q")); }), ErrorCode::EmptyTrace);
}

TEST(AggregateFeatures, MinPrevMatchesFoldOnRandomTraces) {
  Rng rng = make_rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 30);
  for (int rep = 0; rep < 500; ++rep) {
    const int n = len(rng);
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (auto& s : scores) s = u(rng);
    const auto t = trace_of(scores, std::vector<std::int64_t>(static_cast<std::size_t>(n), 1));
    double fold = 1.0;
    for (int i = 0; i + 1 < n; ++i) fold = std::min(fold, scores[static_cast<std::size_t>(i)]);
    const auto f = aggregate_features(t);
    ASSERT_EQ(f.min_prev_score, fold);
    // The candidate form over the prefix agrees with the appended form.
    TraceState prefix("q");
    for (int i = 0; i + 1 < n; ++i) prefix = append_step(prefix, t.steps()[static_cast<std::size_t>(i)]);
    const auto g = candidate_features(prefix, t.steps().back());
    ASSERT_EQ(g.min_prev_score, f.min_prev_score);
    ASSERT_EQ(g.step_index, f.step_index);
  }
}

TEST(TraceJson, RoundTripIsLossless) {
  TraceState t("abc");
  auto s = step(0.123456789012345678, 77, Origin::Strong);
  s.truth = StepTruth::Incorrect;
  t = append_step(append_step(t, step(0.25, 3)), s).terminate();
  std::stringstream ss;
  write_jsonl(ss, {t, TraceState("empty")});
  const auto back = read_jsonl(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(to_json(back[0]).dump(), to_json(t).dump());
  EXPECT_EQ(back[0].steps()[1].score, s.score);
  EXPECT_EQ(back[1].step_index(), 0);
  EXPECT_FALSE(back[1].terminated());
}

// ---- replay and the adapter's file interfaces ----

TEST(ReplayLoad, WellFormedTwoLineFile) {
  const auto path = write_temp(
      "{\"query_id\":\"a\",\"steps\":[{\"score\":0.5,\"tokens\":4,\"origin\":\"weak\"}],\"terminated\":true}\n"
      "{\"query_id\":\"b\",\"steps\":[],\"terminated\":false}\n");
  const auto traces = replay_load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(traces.size(), 2u);
}

TEST(ReplayLoad, ScoreOutOfRangeNamesField) {
  const auto path =
      write_temp("{\"query_id\":\"a\",\"steps\":[{\"score\":1.5,\"tokens\":4,\"origin\":\"weak\"}],\"terminated\":true}\n");
  try {
    replay_load(path);
    ADD_FAILURE() << "expected InvariantViolation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvariantViolation);
    EXPECT_EQ(e.detail().rfind("score", 0), 0u) << e.detail();
  }
  std::filesystem::remove(path);
}

TEST(ReplayLoad, TruncatedLineReportsLineNumber) {
  const auto path = write_temp(
      "{\"query_id\":\"a\",\"steps\":[],\"terminated\":true}\n"
      "{\"query_id\":\"b\",\"steps\":[{\"score\":0.5,\"tok\n");
  try {
    replay_load(path);
    ADD_FAILURE() << "expected ParseError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(e.detail().find("line 2"), std::string::npos) << e.detail();
  }
  std::filesystem::remove(path);
}

TEST(AdapterInterfaces, CorpusFixtureLoadsAndRoundTrips) {
  const auto traces = replay_load(fixture("adapter_corpus.jsonl"));
  ASSERT_EQ(traces.size(), 3u);
  EXPECT_EQ(traces[1].step_index(), 4);
  EXPECT_FALSE(traces[2].terminated());
  EXPECT_FALSE(traces[2].steps()[0].truth.has_value());

  std::ifstream in(fixture("adapter_corpus.jsonl"));
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    const auto original = nlohmann::json::parse(line);
    EXPECT_EQ(to_json(traces[i]), original) << "line " << i + 1;
    ++i;
  }
}

TEST(AdapterInterfaces, LabeledRowsFixtureLoads) {
  std::ifstream in(fixture("labeled.jsonl"));
  const auto rows = read_labeled_jsonl(in);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].cls, LatentClass::S2);
  std::stringstream ss;
  write_labeled_jsonl(ss, rows);
  const auto back = read_labeled_jsonl(ss);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].min_prev, rows[i].min_prev);
    EXPECT_EQ(back[i].current, rows[i].current);
    EXPECT_EQ(back[i].cls, rows[i].cls);
  }
}

TEST(AdapterInterfaces, CorpusLabelsFollowLatentDynamics) {
  const auto traces = replay_load(fixture("adapter_corpus.jsonl"));
  // Second query: correct, wrong, wrong again (weak after S2 is stuck), then a
  // strong step that cannot help.
  const auto classes = latent_classes(traces[1]);
  const std::vector<LatentClass> expected{LatentClass::S0, LatentClass::S2, LatentClass::S1, LatentClass::S1};
  EXPECT_EQ(classes, expected);
}

namespace {

// Test-side mock of the adapter's fold from protocol messages to a trace: a
// weak candidate is accepted unless the next request regenerates the step.
std::vector<TraceState> fold_session(std::istream& in) {
  const std::map<std::string, std::string> response_for{
      {"ProposeWeak", "StepResult"}, {"RegenerateStrong", "StepResult"}, {"ScoreStep", "ScoreResult"}};
  std::vector<nlohmann::json> msgs;
  std::string line;
  while (std::getline(in, line)) msgs.push_back(nlohmann::json::parse(line));

  std::vector<TraceState> out;
  std::optional<StepRecord> pending;
  std::string expecting;
  auto flush = [&] {
    if (pending) out.back() = append_step(out.back(), *pending);
    pending.reset();
  };
  for (const auto& m : msgs) {
    const auto kind = m.at("kind").get<std::string>();
    const auto qid = m.at("query_id").get<std::string>();
    if (out.empty() || out.back().query_id() != qid) out.emplace_back(qid);
    if (!expecting.empty()) {
      // Every request is answered by its response kind or by Error.
      EXPECT_TRUE(kind == expecting || kind == "Error") << "got " << kind << " expecting " << expecting;
      expecting.clear();
      if (kind == "StepResult") {
        EXPECT_GE(m.at("token_count").get<std::int64_t>(), 1);
        pending->token_count = m.at("token_count").get<std::int64_t>();
      } else if (kind == "ScoreResult") {
        pending->score = m.at("score").get<double>();
      } else {
        pending.reset();  // incomplete episode
      }
      continue;
    }
    if (kind == "Terminate") {
      flush();
      out.back() = out.back().terminate();
      continue;
    }
    if (!response_for.count(kind)) {
      ADD_FAILURE() << "unexpected request " << kind;
      continue;
    }
    expecting = response_for.at(kind);
    if (kind == "ProposeWeak") {
      flush();
      pending = StepRecord{};
    } else if (kind == "RegenerateStrong") {
      pending = StepRecord{};
      pending->origin = Origin::Strong;
    }
  }
  EXPECT_TRUE(expecting.empty()) << "session ended awaiting " << expecting;
  return out;
}

}  // namespace

TEST(AdapterInterfaces, ProtocolSessionFoldsIntoCorpusTrace) {
  std::ifstream in(fixture("protocol_session.jsonl"));
  const auto folded = fold_session(in);
  ASSERT_EQ(folded.size(), 2u);
  const auto corpus = replay_load(fixture("adapter_corpus.jsonl"));
  const auto& want = corpus[0];
  ASSERT_EQ(folded[0].steps().size(), want.steps().size());
  EXPECT_TRUE(folded[0].terminated());
  for (std::size_t i = 0; i < want.steps().size(); ++i) {
    EXPECT_EQ(folded[0].steps()[i].score, want.steps()[i].score);
    EXPECT_EQ(folded[0].steps()[i].token_count, want.steps()[i].token_count);
    EXPECT_EQ(folded[0].steps()[i].origin, want.steps()[i].origin);
  }
  // The strong endpoint failed mid-step: nothing accepted, episode left open.
  EXPECT_EQ(folded[1].query_id(), "math-0004");
  EXPECT_TRUE(folded[1].steps().empty());
  EXPECT_FALSE(folded[1].terminated());
}

// ---- sim-env ----

TEST(LatentStep, S1IsAbsorbing) {
  EnvConfig cfg;
  Rng rng = make_rng(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(latent_step(LatentClass::S1, RoutingAction::Continue, cfg, rng), LatentClass::S1);
    EXPECT_EQ(latent_step(LatentClass::S1, RoutingAction::Regenerate, cfg, rng), LatentClass::S1);
  }
}

TEST(LatentStep, PerfectStrongRecoversFromS2) {
  EnvConfig cfg;
  cfg.p_strong = 1.0;
  Rng rng = make_rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(latent_step(LatentClass::S2, RoutingAction::Regenerate, cfg, rng), LatentClass::S0);
}

TEST(LatentStep, TerminalFails) {
  EnvConfig cfg;
  Rng rng = make_rng(3);
  EXPECT_EQ(code_of([&] { latent_step(LatentClass::Terminal, RoutingAction::Continue, cfg, rng); }),
            ErrorCode::SteppedTerminal);
}

TEST(LatentStep, MonteCarloCalibration) {
  const int n = 100000;
  EnvConfig cfg;
  cfg.p_weak = 0.8;
  cfg.p_strong = 0.37;  // below p_weak on purpose
  Rng rng = make_rng(4);
  int weak_hits = 0, strong_s0 = 0, strong_s2 = 0, s2_continue_s1 = 0;
  for (int i = 0; i < n; ++i) {
    weak_hits += latent_step(LatentClass::S0, RoutingAction::Continue, cfg, rng) == LatentClass::S0;
    strong_s0 += latent_step(LatentClass::S0, RoutingAction::Regenerate, cfg, rng) == LatentClass::S0;
    strong_s2 += latent_step(LatentClass::S2, RoutingAction::Regenerate, cfg, rng) == LatentClass::S0;
    s2_continue_s1 += latent_step(LatentClass::S2, RoutingAction::Continue, cfg, rng) == LatentClass::S1;
  }
  auto within = [&](int hits, double p) {
    const double se = std::sqrt(p * (1 - p) / n);
    return std::abs(static_cast<double>(hits) / n - p) <= 3 * se;
  };
  EXPECT_NEAR(static_cast<double>(weak_hits) / n, 0.8, 0.01);
  EXPECT_TRUE(within(weak_hits, 0.8));
  EXPECT_TRUE(within(strong_s0, 0.37));
  EXPECT_TRUE(within(strong_s2, 0.37));
  EXPECT_EQ(s2_continue_s1, n);
}

TEST(EmitScore, DegenerateEmissions) {
  ScoreEmission e{Distribution::point(1.0), Distribution::point(0.0)};
  Rng rng = make_rng(5);
  EXPECT_EQ(emit_score(LatentClass::S0, e, NoiseSpec::none(), rng), 1.0);
  EXPECT_EQ(emit_score(LatentClass::S2, e, NoiseSpec::none(), rng), 0.0);
  EXPECT_EQ(emit_score(LatentClass::S1, e, NoiseSpec::none(), rng), 0.0);
}

TEST(EmitScore, BetaMean) {
  ScoreEmission e;
  Rng rng = make_rng(6);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += emit_score(LatentClass::S0, e, NoiseSpec::none(), rng);
  EXPECT_NEAR(sum / n, 0.8, 0.01);
}

TEST(EmitScore, NoiseIsClampedIntoUnitInterval) {
  ScoreEmission e;
  Rng rng = make_rng(8);
  for (const auto& noise : {NoiseSpec::extra_variance(0.5), NoiseSpec::miscalibration(0.7), NoiseSpec::miscalibration(-0.7)}) {
    for (int i = 0; i < 20000; ++i) {
      const double s = emit_score(i % 2 ? LatentClass::S0 : LatentClass::S2, e, noise, rng);
      ASSERT_GE(s, 0.0);
      ASSERT_LE(s, 1.0);
    }
  }
}

TEST(RunEpisode, PerfectWeakModel) {
  EnvConfig cfg;
  cfg.p_weak = 1.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto r = run_episode([](const AggFeatures&, const TraceState&) { return RoutingAction::Continue; }, cfg, 0.0, s);
    EXPECT_EQ(r.final_reward, 1);
    EXPECT_EQ(r.ledger.strong_tokens, 0);
  }
}

TEST(RunEpisode, PerfectFreeStrongModel) {
  EnvConfig cfg;
  cfg.p_weak = 0.1;
  cfg.p_strong = 1.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto r = run_episode([](const AggFeatures&, const TraceState&) { return RoutingAction::Regenerate; }, cfg, 0.0, s);
    EXPECT_EQ(r.final_reward, 1);
  }
}

TEST(RunEpisode, NoCorrectStepPossible) {
  EnvConfig cfg;
  cfg.p_weak = 0.0;
  cfg.p_strong = 0.0;
  Rng coin = make_rng(9);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto r = run_episode(
        [&](const AggFeatures&, const TraceState&) {
          return std::bernoulli_distribution(0.5)(coin) ? RoutingAction::Regenerate : RoutingAction::Continue;
        },
        cfg, 0.0, s);
    EXPECT_EQ(r.final_reward, 0);
  }
}

TEST(RunEpisode, PolicyExceptionBecomesPolicyFailure) {
  EnvConfig cfg;
  EXPECT_EQ(code_of([&] {
              run_episode([](const AggFeatures&, const TraceState&) -> RoutingAction { throw std::runtime_error("boom"); },
                          cfg, 0.0, 1);
            }),
            ErrorCode::PolicyFailure);
}

TEST(RunEpisode, RlReturnSubtractsCost) {
  EnvConfig cfg;
  const auto r = run_episode([](const AggFeatures&, const TraceState&) { return RoutingAction::Regenerate; }, cfg, 0.0, 11);
  EXPECT_DOUBLE_EQ(rl_return(r, 1e-3), r.final_reward - 1e-3 * static_cast<double>(r.ledger.strong_tokens));
}

TEST(RunEpisodeProperties, InvariantsOnRandomPolicies) {
  EnvConfig cfg;
  cfg.noise = NoiseSpec::extra_variance(0.1);
  for (std::uint64_t s = 0; s < 2000; ++s) {
    Rng coin = make_rng(derive_seed(s, "policy"));
    const double rate = std::uniform_real_distribution<double>(0.0, 1.0)(coin);
    const auto r = run_episode(
        [&](const AggFeatures&, const TraceState&) {
          return std::bernoulli_distribution(rate)(coin) ? RoutingAction::Regenerate : RoutingAction::Continue;
        },
        cfg, 0.0, s);
    // Absorbing S1.
    bool seen_s1 = false;
    for (auto c : r.latent_path) {
      if (seen_s1) ASSERT_TRUE(c == LatentClass::S1 || c == LatentClass::Terminal);
      seen_s1 = seen_s1 || c == LatentClass::S1;
    }
    ASSERT_EQ(r.latent_path.back(), LatentClass::Terminal);
    // Reward iff the last live class is S0.
    const auto last = r.latent_path[r.latent_path.size() - 2];
    ASSERT_EQ(r.final_reward == 1, last == LatentClass::S0);
    if (r.final_reward == 1) ASSERT_FALSE(seen_s1);
    // Ledger matches the trace.
    std::int64_t strong = 0, regen = 0;
    for (const auto& st : r.trace.steps()) {
      if (st.origin == Origin::Strong) {
        strong += st.token_count;
        ++regen;
      }
    }
    ASSERT_EQ(r.ledger.strong_tokens, strong);
    ASSERT_EQ(r.ledger.regenerate_count, regen);
    ASSERT_EQ(r.ledger.strong_tokens == 0, r.ledger.regenerate_count == 0);
    ASSERT_EQ(r.trace.step_index(), r.horizon);
    ASSERT_GE(r.horizon, 6);
    ASSERT_LE(r.horizon, 30);
    ASSERT_TRUE(r.trace.terminated());
    // Truth labels agree with the latent path.
    for (std::size_t t = 0; t < r.trace.steps().size(); ++t) {
      ASSERT_EQ(*r.trace.steps()[t].truth == StepTruth::Correct, r.latent_path[t] == LatentClass::S0);
    }
    ASSERT_EQ(latent_classes(r.trace), std::vector<LatentClass>(r.latent_path.begin(), r.latent_path.end() - 1));
  }
}

TEST(RunEpisodeProperties, SeededDeterminism) {
  EnvConfig cfg;
  cfg.noise = NoiseSpec::extra_variance(0.15);
  auto policy = [](const AggFeatures& f, const TraceState&) {
    return f.current_score < 0.5 ? RoutingAction::Regenerate : RoutingAction::Continue;
  };
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = run_episode(policy, cfg, 1e-3, s);
    const auto b = run_episode(policy, cfg, 1e-3, s);
    ASSERT_EQ(to_json(a.trace).dump(), to_json(b.trace).dump());
    ASSERT_EQ(a.latent_path, b.latent_path);
    ASSERT_EQ(a.ledger.strong_tokens, b.ledger.strong_tokens);
    ASSERT_EQ(a.final_reward, b.final_reward);
  }
}

TEST(RunEpisodeProperties, StrongOnlyTokensMatchAlwaysRegenerate) {
  EnvConfig cfg;
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto r = run_episode([](const AggFeatures&, const TraceState&) { return always(RoutingAction::Regenerate); }, cfg,
                               0.0, s);
    ASSERT_EQ(r.ledger.strong_tokens, strong_only_tokens(cfg, s));
  }
}

TEST(EnvConfigJson, RoundTripAndFieldPaths) {
  EnvConfig cfg;
  cfg.noise = NoiseSpec::miscalibration(-0.1);
  cfg.p_strong = 0.3;
  const auto back = env_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));

  auto bad = to_json(cfg);
  bad["weak_token_dist"] = {{"kind", "beta"}, {"a", 2}, {"b", 2}};
  try {
    env_from_json(bad);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(e.detail().find("env.weak_token_dist"), std::string::npos) << e.detail();
  }
}
