#include "steproute/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

namespace steproute {

void PpoConfig::validate() const {
  auto fail = [](const char* field, const char* what) { throw Error(ErrorCode::ConfigError, std::string(field) + ": " + what); };
  if (!(clip > 0)) fail("clip", "must be > 0");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) fail("gae_lambda", "must lie in [0,1]");
  if (!(learning_rate > 0)) fail("learning_rate", "must be > 0");
  if (!(discount >= 0 && discount <= 1)) fail("discount", "must lie in [0,1]");
  if (epochs_per_batch < 1) fail("epochs_per_batch", "must be positive");
  if (minibatch_size < 1) fail("minibatch_size", "must be positive");
  if (rollout_episodes < 1) fail("rollout_episodes", "must be positive");
  if (iterations < 0) fail("iterations", "must be nonnegative");
  if (architecture.hidden.empty()) fail("hidden", "needs at least one hidden layer");
  for (int h : architecture.hidden) {
    if (h < 1) fail("hidden", "layer sizes must be positive");
  }
  if (!(scaling.token_scale > 0 && scaling.max_steps > 0)) fail("scaling", "scales must be positive");
}

nlohmann::json to_json(const PpoConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"clip", c.clip},
          {"entropy_coef", c.entropy_coef},
          {"gae_lambda", c.gae_lambda},
          {"discount", c.discount},
          {"normalize_advantages", c.normalize_advantages},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"epochs_per_batch", c.epochs_per_batch},
          {"minibatch_size", c.minibatch_size},
          {"rollout_episodes", c.rollout_episodes},
          {"iterations", c.iterations},
          {"hidden", c.architecture.hidden},
          {"token_scale", c.scaling.token_scale},
          {"max_steps", c.scaling.max_steps}};
}

PpoConfig ppo_config_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, path + ": expected an object");
  PpoConfig c;
  auto num = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw Error(ErrorCode::ConfigError, path + "." + key + ": expected a number");
    out = j[key].get<double>();
  };
  auto integer = [&](const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) throw Error(ErrorCode::ConfigError, path + "." + key + ": expected an integer");
    out = j[key].get<int>();
  };
  num("learning_rate", c.learning_rate);
  num("clip", c.clip);
  num("entropy_coef", c.entropy_coef);
  num("gae_lambda", c.gae_lambda);
  num("value_coef", c.value_coef);
  num("max_grad_norm", c.max_grad_norm);
  num("adam_beta1", c.adam_beta1);
  num("adam_beta2", c.adam_beta2);
  num("adam_eps", c.adam_eps);
  num("token_scale", c.scaling.token_scale);
  num("max_steps", c.scaling.max_steps);
  integer("epochs_per_batch", c.epochs_per_batch);
  integer("minibatch_size", c.minibatch_size);
  integer("rollout_episodes", c.rollout_episodes);
  integer("iterations", c.iterations);
  if (j.contains("discount")) {
    num("discount", c.discount);
    if (c.discount != 1.0) throw Error(ErrorCode::ConfigError, path + ".discount: rewards are undiscounted (1.0)");
  }
  if (j.contains("normalize_advantages")) {
    if (!j["normalize_advantages"].is_boolean() || j["normalize_advantages"].get<bool>()) {
      throw Error(ErrorCode::ConfigError, path + ".normalize_advantages: advantages are used unnormalized (false)");
    }
  }
  if (j.contains("hidden")) {
    if (!j["hidden"].is_array()) throw Error(ErrorCode::ConfigError, path + ".hidden: expected an array");
    c.architecture.hidden.clear();
    for (const auto& h : j["hidden"]) {
      if (!h.is_number_integer()) throw Error(ErrorCode::ConfigError, path + ".hidden: expected integers");
      c.architecture.hidden.push_back(h.get<int>());
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, path + "." + e.detail());
  }
  return c;
}

PolicyNet ppo_update(const PolicyNet& net, const RolloutBatch& batch, const PpoConfig& cfg, AdamState& adam, Rng& rng) {
  if (batch.size() == 0) throw Error(ErrorCode::EmptyDataset, "empty PPO batch");
  if (!batch.old_log_probs.allFinite()) throw Error(ErrorCode::NonFiniteInput, "old log-probs");
  PolicyNet out = net;
  const auto n = batch.size();
  if (adam.m.size() != out.parameters().size()) {
    adam.m = Eigen::VectorXd::Zero(out.parameters().size());
    adam.v = Eigen::VectorXd::Zero(out.parameters().size());
    adam.steps = 0;
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto mb = static_cast<Eigen::Index>(cfg.minibatch_size);
  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += mb) {
      const auto end = std::min(n, start + mb);
      const std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + end);
      const auto loss = ppo_loss(out, batch.subset(idx), cfg, true);
      Eigen::VectorXd grad = loss.gradient;
      if (!grad.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "epoch " + std::to_string(epoch));
      if (cfg.max_grad_norm > 0) {
        const double norm = grad.norm();
        if (norm > cfg.max_grad_norm) grad *= cfg.max_grad_norm / norm;
      }
      ++adam.steps;
      adam.m = cfg.adam_beta1 * adam.m + (1 - cfg.adam_beta1) * grad;
      adam.v = cfg.adam_beta2 * adam.v + (1 - cfg.adam_beta2) * grad.cwiseAbs2();
      const double c1 = 1 - std::pow(cfg.adam_beta1, static_cast<double>(adam.steps));
      const double c2 = 1 - std::pow(cfg.adam_beta2, static_cast<double>(adam.steps));
      out.parameters().array() -=
          cfg.learning_rate * (adam.m.array() / c1) / ((adam.v.array() / c2).sqrt() + cfg.adam_eps);
    }
  }
  return out;
}

std::pair<Eigen::Vector2d, double> net_forward(const PolicyNet& net, const AggFeatures& feats,
                                               const FeatureScaling& scaling) {
  const Eigen::MatrixXd x = scaling.apply(feats);
  const auto fwd = net.forward(x);
  return {fwd.logits.col(0).head<2>(), fwd.values(0, 0)};
}

RoutingAction AggRouter::decide(const AggFeatures& feats, const TraceState&) {
  const auto [logits, value] = net_forward(net_, feats, scaling_);
  (void)value;
  return logits[1] > logits[0] ? RoutingAction::Regenerate : RoutingAction::Continue;
}

namespace {

struct StepSample {
  Eigen::Vector4d input;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
};

class SamplingRouter final : public Router {
 public:
  SamplingRouter(const PolicyNet& net, const FeatureScaling& scaling, Rng& rng) : net_(net), scaling_(scaling), rng_(rng) {}

  RoutingAction decide(const AggFeatures& feats, const TraceState&) override {
    StepSample s;
    s.input = scaling_.apply(feats);
    const auto fwd = net_.forward(Eigen::MatrixXd(s.input));
    const Eigen::MatrixXd logp = log_softmax(fwd.logits);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    s.action = u01(rng_) < std::exp(logp(1, 0)) ? 1 : 0;
    s.log_prob = logp(s.action, 0);
    s.value = fwd.values(0, 0);
    samples.push_back(s);
    return s.action == 1 ? RoutingAction::Regenerate : RoutingAction::Continue;
  }

  std::vector<StepSample> samples;

 private:
  const PolicyNet& net_;
  const FeatureScaling& scaling_;
  Rng& rng_;
};

}  // namespace

Rollouts collect_rollouts(const PolicyNet& net, const EnvConfig& env, double lambda_cost, const PpoConfig& cfg,
                          std::uint64_t seed) {
  std::vector<StepSample> all;
  std::vector<double> advantages;
  std::vector<double> returns;
  IterationMetrics stats;
  std::int64_t decisions = 0;
  std::int64_t regens = 0;
  for (int e = 0; e < cfg.rollout_episodes; ++e) {
    const auto ep_seed = episode_seed(seed, static_cast<std::uint64_t>(e));
    Rng policy_rng = make_rng(derive_seed(ep_seed, "policy"));
    SamplingRouter router(net, cfg.scaling, policy_rng);
    const auto result = run_episode(router, env, lambda_cost, ep_seed);

    const std::size_t steps = router.samples.size();
    std::vector<double> rewards(steps, 0.0);
    std::vector<double> values(steps, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      rewards[t] = -lambda_cost * static_cast<double>(result.decisions[t].strong_tokens);
      values[t] = router.samples[t].value;
    }
    if (steps > 0) rewards.back() += result.final_reward;
    const auto adv = compute_gae(rewards, values, 0.0, cfg.gae_lambda, cfg.discount);
    for (std::size_t t = 0; t < steps; ++t) {
      all.push_back(router.samples[t]);
      advantages.push_back(adv[t]);
      returns.push_back(adv[t] + values[t]);
    }
    stats.mean_return += rl_return(result, lambda_cost);
    stats.accuracy += result.final_reward;
    stats.mean_strong_tokens += static_cast<double>(result.ledger.strong_tokens);
    decisions += static_cast<std::int64_t>(steps);
    regens += result.ledger.regenerate_count;
  }
  const double episodes = cfg.rollout_episodes;
  stats.mean_return /= episodes;
  stats.accuracy /= episodes;
  stats.mean_strong_tokens /= episodes;
  stats.regen_rate = decisions > 0 ? static_cast<double>(regens) / static_cast<double>(decisions) : 0.0;

  Rollouts out;
  out.stats = stats;
  const auto n = static_cast<Eigen::Index>(all.size());
  out.batch.inputs.resize(4, n);
  out.batch.actions.resize(all.size());
  out.batch.old_log_probs.resize(n);
  out.batch.advantages.resize(n);
  out.batch.returns.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = all[static_cast<std::size_t>(i)];
    out.batch.inputs.col(i) = s.input;
    out.batch.actions[static_cast<std::size_t>(i)] = s.action;
    out.batch.old_log_probs[i] = s.log_prob;
    out.batch.advantages[i] = advantages[static_cast<std::size_t>(i)];
    out.batch.returns[i] = returns[static_cast<std::size_t>(i)];
  }
  return out;
}

std::pair<PolicyNet, TrainRun> train_agg(const EnvConfig& env, double lambda_cost, const PpoConfig& cfg,
                                         std::uint64_t seed) {
  if (!(lambda_cost >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda_cost must be >= 0");
  cfg.validate();
  NetArchitecture arch = cfg.architecture;
  arch.input = 4;
  arch.actions = 2;
  PolicyNet net(arch);
  net.initialize(derive_seed(seed, "policy-init"));
  TrainRun run{lambda_cost, seed, cfg, {}};
  AdamState adam;
  Rng update_rng = make_rng(derive_seed(seed, "update"));
  const auto rollout_seed = derive_seed(seed, "rollout");
  for (int it = 0; it < cfg.iterations; ++it) {
    auto rollouts = collect_rollouts(net, env, lambda_cost, cfg, derive_seed(rollout_seed, static_cast<std::uint64_t>(it)));
    rollouts.stats.iteration = it;
    run.metrics.push_back(rollouts.stats);
    net = ppo_update(net, rollouts.batch, cfg, adam, update_rng);
  }
  return {std::move(net), std::move(run)};
}

void write_metrics_csv(std::ostream& out, const TrainRun& run) {
  out << "iteration,mean_return,accuracy,mean_strong_tokens,regen_rate\n";
  out.precision(17);
  for (const auto& m : run.metrics) {
    out << m.iteration << ',' << m.mean_return << ',' << m.accuracy << ',' << m.mean_strong_tokens << ','
        << m.regen_rate << '\n';
  }
}

nlohmann::json checkpoint_to_json(const PolicyNet& net, const FeatureScaling& scaling) {
  const auto& p = net.parameters();
  return {{"format", "steproute-policy-net"},
          {"version", 1},
          {"architecture",
           {{"input", net.architecture().input}, {"hidden", net.architecture().hidden}, {"actions", net.architecture().actions}}},
          {"scaling", {{"token_scale", scaling.token_scale}, {"max_steps", scaling.max_steps}}},
          {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

std::pair<PolicyNet, FeatureScaling> checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "steproute-policy-net" || j.at("version").get<int>() != 1) {
      throw Error(ErrorCode::InvariantViolation, "checkpoint format/version");
    }
    NetArchitecture arch;
    arch.input = j.at("architecture").at("input").get<int>();
    arch.hidden = j.at("architecture").at("hidden").get<std::vector<int>>();
    arch.actions = j.at("architecture").at("actions").get<int>();
    FeatureScaling scaling{j.at("scaling").at("token_scale").get<double>(), j.at("scaling").at("max_steps").get<double>()};
    const auto values = j.at("parameters").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != arch.parameter_count()) {
      throw Error(ErrorCode::InvariantViolation,
                  "parameter count " + std::to_string(values.size()) + " != " + std::to_string(arch.parameter_count()));
    }
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return {PolicyNet(arch, std::move(p)), scaling};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const PolicyNet& net, const FeatureScaling& scaling) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << checkpoint_to_json(net, scaling).dump() << '\n';
}

std::pair<PolicyNet, FeatureScaling> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::vector<double> geometric_ladder(double lo, double hi, int count) {
  if (count < 1 || !(lo > 0) || !(hi > 0)) throw Error(ErrorCode::ConfigError, "geometric ladder needs count >= 1 and positive ends");
  if (count == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(count));
  const double ratio = std::log(hi / lo) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(ratio * i);
  out.back() = hi;
  return out;
}

}  // namespace steproute
