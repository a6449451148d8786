#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "oracles.hpp"
#include "steproute/sweep.hpp"

using namespace steproute;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("steproute_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const nlohmann::json& j) {
    const auto p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  int run(const std::string& sub, const fs::path& config, const std::string& out, const std::string& extra = "") {
    const std::string cmd = std::string(STEPROUTE_CLI) + " " + sub + " --config " + config.string() + " --out " +
                            (dir_ / out).string() + " " + extra + " 2>" + (dir_ / (out + ".err")).string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
};

const std::vector<double> kEleven{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

}  // namespace

TEST(SweepThreshold, ZeroThresholdIsAlwaysContinue) {
  EnvConfig env;
  const auto s = sweep_threshold(env, {0.0, 0.5}, 300, 11);
  ASSERT_EQ(s.outcomes.size(), 2u);
  for (std::size_t e = 0; e < 300; ++e) {
    EXPECT_EQ(s.outcomes[0][e].strong_tokens, 0);
    EXPECT_EQ(s.outcomes[0][e].correct, s.endpoints.weak[e].correct);
  }
  const auto p = summarize(0.0, s.outcomes[0], s.endpoints);
  EXPECT_EQ(p.normalized_cost, 0.0);
  EXPECT_EQ(p.n_queries, 300);
}

TEST(SweepThreshold, ThresholdOneMatchesStrongOnlyTokens) {
  EnvConfig env;
  const auto s = sweep_threshold(env, {1.0}, 300, 12);
  // Scores are strictly below 1 almost surely, so every step escalates.
  for (std::size_t e = 0; e < 300; ++e) EXPECT_EQ(s.outcomes[0][e].strong_tokens, s.endpoints.strong[e].strong_tokens);
}

TEST(SweepThreshold, ThreadCountDoesNotChangeOutcomes) {
  EnvConfig env;
  const auto a = sweep_threshold(env, {0.3, 0.7}, 400, 13, false, 1);
  const auto b = sweep_threshold(env, {0.3, 0.7}, 400, 13, false, 4);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t e = 0; e < 400; ++e) {
      ASSERT_EQ(a.outcomes[k][e].strong_tokens, b.outcomes[k][e].strong_tokens);
      ASSERT_EQ(a.outcomes[k][e].correct, b.outcomes[k][e].correct);
    }
  }
}

TEST(SweepPomdp, FreePerfectStrongRegeneratesWheneverS2IsPossible) {
  // With lambda = 0 and p_strong = 1, regenerating from S2 repairs the step at
  // no cost while continuing loses the episode; from S0 and S1 the two tie.
  EnvConfig env;
  env.p_strong = 1.0;
  PomdpSweepSettings settings;
  settings.band = TriggerBand::always();
  settings.lookup_resolution = 10;
  settings.tabulation = 32;
  settings.model = std::make_shared<ObservationModel>(
      fit_observation_model(collect_labeled_observations(env, 600, 0.3, 3)));
  const auto planner = make_planner(env, 0.0, settings);
  ASSERT_TRUE(planner.cache.has_value());
  int checked = 0;
  for (std::size_t i = 0; i < planner.cache->actions.size(); ++i) {
    if (planner.cache->point(i)[2] < 0.1) continue;
    EXPECT_EQ(planner.cache->actions[i], RoutingAction::Regenerate) << planner.cache->point(i).transpose();
    ++checked;
  }
  EXPECT_EQ(checked, 55);  // lattice points with k >= 1 at resolution 10

  const auto s = sweep_lambda_pomdp(env, {0.0}, settings, 300, 21);
  const auto p = summarize(0.0, s.outcomes[0], s.endpoints);
  EXPECT_GT(p.accuracy, summarize(0.0, s.endpoints.weak, s.endpoints).accuracy);
}

TEST(Bootstrap, IdenticalSweepsHaveZeroGap) {
  EnvConfig env;
  const auto s = sweep_threshold(env, kEleven, 500, 14);
  const auto g = bootstrap_ibc_gap(s, s, 50, 2);
  EXPECT_EQ(g.point, 0.0);
  EXPECT_EQ(g.mean, 0.0);
  EXPECT_EQ(g.se, 0.0);
  EXPECT_EQ(g.resamples, 50);
}

TEST(Bootstrap, SeMatchesSpreadOfResampledGaps) {
  // Sanity scale check: the bootstrap SE of a real gap is positive and well
  // below the gap's own magnitude range.
  EnvConfig env;
  const auto a = sweep_threshold(env, kEleven, 800, 15);
  const auto b = sweep_threshold(env, {0.0, 0.3, 0.6, 1.0}, 800, 15);
  const auto g = bootstrap_ibc_gap(a, b, 100, 3);
  EXPECT_GT(g.se, 0.0);
  EXPECT_LT(g.se, 1.0);
  EXPECT_EQ(g.point, ibc_delta(a.curve) - ibc_delta(b.curve));
}

TEST(FitEnvFromTraces, RecoversAccuraciesFromSimulatedTraces) {
  EnvConfig env;
  std::vector<TraceState> traces;
  Rng rng = make_rng(4);
  std::bernoulli_distribution regen(0.3);
  const DecisionFn random_policy = [&](const AggFeatures&, const TraceState&) {
    return regen(rng) ? RoutingAction::Regenerate : RoutingAction::Continue;
  };
  for (int i = 0; i < 3000; ++i) {
    traces.push_back(run_episode(random_policy, env, 0.0, episode_seed(4, static_cast<std::uint64_t>(i))).trace);
  }
  const auto fitted = fit_env_from_traces(traces);
  // Independent tally of the per-origin correct fraction.
  double n[2] = {0, 0}, ok[2] = {0, 0};
  int shortest = 1 << 30, longest = 0;
  for (const auto& t : traces) {
    for (const auto& st : t.steps()) {
      const int o = st.origin == Origin::Weak ? 0 : 1;
      n[o] += 1;
      ok[o] += *st.truth == StepTruth::Correct;
    }
    shortest = std::min(shortest, static_cast<int>(t.steps().size()));
    longest = std::max(longest, static_cast<int>(t.steps().size()));
  }
  EXPECT_NEAR(fitted.p_weak, ok[0] / n[0], 1e-12);
  EXPECT_NEAR(fitted.p_strong, ok[1] / n[1], 1e-12);
  EXPECT_EQ(shortest, 6);
  EXPECT_EQ(longest, 30);
  EXPECT_NEAR(fitted.weak_tokens.mean(), env.weak_tokens.mean(), 0.05 * env.weak_tokens.mean());
}

TEST_F(Cli, SweepIsByteDeterministic) {
  const auto cfg = write_config("c.json", {{"seed", 42}, {"episodes", 400}, {"threshold", {{"ladder", kEleven}}}});
  ASSERT_EQ(run("sweep-thr", cfg, "a"), 0) << slurp(dir_ / "a.err");
  ASSERT_EQ(run("sweep-thr", cfg, "b"), 0);
  const auto csv = slurp(dir_ / "a" / "curve.csv");
  EXPECT_EQ(csv, slurp(dir_ / "b" / "curve.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "manifest.json"), slurp(dir_ / "b" / "manifest.json"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);  // header + 11 rows

  std::istringstream in(csv);
  const auto rows = read_curve_csv(in);
  ASSERT_EQ(rows.size(), 11u);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].control, kEleven[i]);

  const auto manifest = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 42);
  EXPECT_EQ(manifest["mode"], "sweep-thr");
  EXPECT_TRUE(manifest["files"].contains("curve.csv"));
  EXPECT_EQ(manifest["files"]["curve.csv"]["bytes"], csv.size());
  EXPECT_TRUE(fs::exists(dir_ / "a" / "report.json"));
}

TEST_F(Cli, SeedOverrideChangesOutputAndThreadsDoNot) {
  const auto cfg = write_config("c.json", {{"seed", 42}, {"episodes", 300}, {"threads", 1}, {"threshold", {{"ladder", {0.5}}}}});
  const auto cfg4 = write_config("c4.json", {{"seed", 42}, {"episodes", 300}, {"threads", 4}, {"threshold", {{"ladder", {0.5}}}}});
  ASSERT_EQ(run("sweep-thr", cfg, "a"), 0);
  ASSERT_EQ(run("sweep-thr", cfg4, "b"), 0);
  ASSERT_EQ(run("sweep-thr", cfg, "c", "--seed 43"), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "curve.csv"), slurp(dir_ / "b" / "curve.csv"));
  EXPECT_NE(slurp(dir_ / "a" / "curve.csv"), slurp(dir_ / "c" / "curve.csv"));
}

TEST_F(Cli, ConfigErrorsExitOneAndNameTheField) {
  const auto cfg = write_config("c.json", {{"episodes", 10}, {"threshold", {{"ladder", {0.5, 1.5}}}}});
  EXPECT_EQ(run("sweep-thr", cfg, "a"), 1);
  EXPECT_NE(slurp(dir_ / "a.err").find("threshold.ladder[1]"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "a"));

  const auto typo = write_config("t.json", {{"episodes", 10}, {"treshold", {{"ladder", {0.5}}}}});
  EXPECT_EQ(run("sweep-thr", typo, "b"), 1);
  EXPECT_NE(slurp(dir_ / "b.err").find("treshold"), std::string::npos);

  const auto env = write_config("e.json", {{"env", {{"p_weak", 2.0}}}, {"threshold", {{"ladder", {0.5}}}}});
  EXPECT_EQ(run("sweep-thr", env, "c"), 1);
  EXPECT_NE(slurp(dir_ / "c.err").find("env.p_weak"), std::string::npos);

  EXPECT_EQ(run("sweep-thr", dir_ / "missing.json", "d"), 1);
}

TEST_F(Cli, RuntimeErrorsExitTwo) {
  const auto cfg = write_config("c.json", {{"replay", {{"corpus", (dir_ / "nope.jsonl").string()}}}});
  EXPECT_EQ(run("replay", cfg, "a"), 2);
  EXPECT_FALSE(fs::exists(dir_ / "a"));
}

TEST_F(Cli, ReplayFixtureCorpus) {
  const auto cfg = write_config(
      "c.json", {{"replay", {{"corpus", std::string(STEPROUTE_FIXTURES) + "/adapter_corpus.jsonl"}, {"k", 0.5}}}});
  ASSERT_EQ(run("replay", cfg, "r"), 0) << slurp(dir_ / "r.err");
  const auto summary = nlohmann::json::parse(slurp(dir_ / "r" / "summary.json"));
  EXPECT_EQ(summary["traces"], 3);
  EXPECT_EQ(summary["steps"], 9);
  EXPECT_TRUE(summary["min_score_auc"].is_null());  // one trace is unlabeled
  const auto decisions = slurp(dir_ / "r" / "decisions.jsonl");
  EXPECT_EQ(std::count(decisions.begin(), decisions.end(), '\n'), 9);
}

TEST_F(Cli, EvalRejectsCorpusWithUnlabeledSteps) {
  const auto cfg = write_config(
      "c.json", {{"eval", {{"corpus", std::string(STEPROUTE_FIXTURES) + "/adapter_corpus.jsonl"}, {"policy", "threshold"}, {"controls", {0.5}}}}});
  EXPECT_EQ(run("eval", cfg, "e"), 2);
  EXPECT_NE(slurp(dir_ / "e.err").find("math-0003"), std::string::npos);
}

TEST_F(Cli, EvalOnFittedCorpusWritesReport) {
  // The labeled traces of the fixture corpus.
  std::istringstream all(slurp(std::string(STEPROUTE_FIXTURES) + "/adapter_corpus.jsonl"));
  std::ofstream labeled(dir_ / "labeled_traces.jsonl");
  std::string line;
  for (int i = 0; i < 2 && std::getline(all, line); ++i) labeled << line << '\n';
  labeled.close();
  const auto cfg = write_config("c.json", {{"seed", 5},
                                           {"episodes", 300},
                                           {"eval",
                                            {{"corpus", (dir_ / "labeled_traces.jsonl").string()},
                                             {"policy", "threshold"},
                                             {"controls", {0.0, 0.5, 1.0}}}}});
  const int rc = run("eval", cfg, "e");
  ASSERT_EQ(rc, 0) << slurp(dir_ / "e.err");
  EXPECT_TRUE(fs::exists(dir_ / "e" / "env.json"));
  std::ifstream in(dir_ / "e" / "curve.csv");
  EXPECT_EQ(read_curve_csv(in).size(), 3u);
}

TEST_F(Cli, FitObsThenSolveThenEvalPomdp) {
  const auto fit = write_config("f.json", {{"seed", 3}, {"fit_obs", {{"episodes", 800}}}});
  ASSERT_EQ(run("fit-obs", fit, "obs"), 0) << slurp(dir_ / "obs.err");
  const auto model = (dir_ / "obs" / "observation_model.json").string();
  const auto solve = write_config("s.json", {{"seed", 3},
                                             {"episodes", 200},
                                             {"pomdp",
                                              {{"lambdas", {1e-3}},
                                               {"observation_model", model},
                                               {"lookup_resolution", 10},
                                               {"trigger", {{"mode", "always"}}}}}});
  ASSERT_EQ(run("solve-pomdp", solve, "sol"), 0) << slurp(dir_ / "sol.err");
  ASSERT_TRUE(fs::exists(dir_ / "sol" / "lookup_00.json"));
  const auto eval = write_config("e.json", {{"seed", 3},
                                            {"episodes", 200},
                                            {"eval",
                                             {{"policy", "pomdp"},
                                              {"lookups", {(dir_ / "sol" / "lookup_00.json").string()}},
                                              {"observation_model", model},
                                              {"trigger", {{"mode", "always"}}}}}});
  ASSERT_EQ(run("eval", eval, "ev"), 0) << slurp(dir_ / "ev.err");
  std::ifstream in(dir_ / "ev" / "curve.csv");
  EXPECT_EQ(read_curve_csv(in).size(), 1u);
}

TEST_F(Cli, TrainAggWritesCheckpoints) {
  const auto cfg = write_config(
      "c.json", {{"seed", 1}, {"episodes", 100}, {"agg", {{"lambdas", {1e-3, 1e-2}}, {"ppo", {{"iterations", 2}, {"rollout_episodes", 16}}}}}});
  ASSERT_EQ(run("train-agg", cfg, "t"), 0) << slurp(dir_ / "t.err");
  EXPECT_TRUE(fs::exists(dir_ / "t" / "checkpoint_00.json"));
  EXPECT_TRUE(fs::exists(dir_ / "t" / "checkpoint_01.json"));
}
