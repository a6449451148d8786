#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "steproute/policy_net.hpp"
#include "steproute/random.hpp"
#include "steproute/sim.hpp"

namespace steproute {

struct PpoConfig {
  double learning_rate = 1e-4;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double gae_lambda = 0.95;
  double discount = 1.0;
  bool normalize_advantages = false;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;
  int epochs_per_batch = 4;
  int minibatch_size = 256;
  int rollout_episodes = 256;
  int iterations = 200;
  NetArchitecture architecture;
  FeatureScaling scaling;

  void validate() const;
};

nlohmann::json to_json(const PpoConfig& cfg);
PpoConfig ppo_config_from_json(const nlohmann::json& j, const std::string& path = "ppo");

template <typename Scalar>
struct RolloutBatchT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix inputs;  // 4 x N, already scaled
  std::vector<int> actions;
  Vector old_log_probs;
  Vector advantages;
  Vector returns;

  Eigen::Index size() const { return inputs.cols(); }

  template <typename Other>
  RolloutBatchT<Other> cast() const {
    return {inputs.template cast<Other>(), actions, old_log_probs.template cast<Other>(),
            advantages.template cast<Other>(), returns.template cast<Other>()};
  }

  RolloutBatchT subset(const std::vector<Eigen::Index>& idx) const {
    RolloutBatchT out;
    const auto n = static_cast<Eigen::Index>(idx.size());
    out.inputs.resize(inputs.rows(), n);
    out.old_log_probs.resize(n);
    out.advantages.resize(n);
    out.returns.resize(n);
    out.actions.resize(idx.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto j = idx[static_cast<std::size_t>(i)];
      out.inputs.col(i) = inputs.col(j);
      out.actions[static_cast<std::size_t>(i)] = actions[static_cast<std::size_t>(j)];
      out.old_log_probs[i] = old_log_probs[j];
      out.advantages[i] = advantages[j];
      out.returns[i] = returns[j];
    }
    return out;
  }
};

using RolloutBatch = RolloutBatchT<double>;

template <typename Scalar>
struct PpoLoss {
  Scalar total = Scalar(0);
  Scalar policy = Scalar(0);
  Scalar value = Scalar(0);
  Scalar entropy = Scalar(0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gradient;  // empty unless requested
};

/// Clipped-surrogate PPO loss: -mean(min(rho A, clip(rho) A)) + value_coef * mean((V - R)^2)
/// - entropy_coef * mean(H). Advantages are used exactly as given.
template <typename Scalar>
PpoLoss<Scalar> ppo_loss(const PolicyNetT<Scalar>& net, const RolloutBatchT<Scalar>& batch, const PpoConfig& cfg,
                         bool with_gradient) {
  using Matrix = typename PolicyNetT<Scalar>::Matrix;
  using RowVector = typename PolicyNetT<Scalar>::RowVector;
  const Eigen::Index n = batch.size();
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "empty PPO batch");
  const auto fwd = net.forward(batch.inputs);
  const Matrix logp = log_softmax(fwd.logits);
  const Matrix probs = logp.array().exp().matrix();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const Scalar clip = Scalar(cfg.clip);
  const Scalar ent_coef = Scalar(cfg.entropy_coef);
  const Scalar v_coef = Scalar(cfg.value_coef);

  PpoLoss<Scalar> out;
  Matrix dlogits = Matrix::Zero(logp.rows(), n);
  RowVector dvalues(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = batch.actions[static_cast<std::size_t>(i)];
    const Scalar adv = batch.advantages[i];
    const Scalar ratio = std::exp(logp(a, i) - batch.old_log_probs[i]);
    const Scalar clipped = std::min(std::max(ratio, Scalar(1) - clip), Scalar(1) + clip);
    const Scalar surr1 = ratio * adv;
    const Scalar surr2 = clipped * adv;
    out.policy -= std::min(surr1, surr2) * inv_n;

    Scalar entropy = Scalar(0);
    for (Eigen::Index k = 0; k < logp.rows(); ++k) entropy -= probs(k, i) * logp(k, i);
    out.entropy += entropy * inv_n;

    const Scalar err = fwd.values(0, i) - batch.returns[i];
    out.value += err * err * inv_n;

    if (with_gradient) {
      // d(-min)/d ratio is -A when the unclipped branch is active, else 0.
      const Scalar dratio = surr1 <= surr2 ? -adv * inv_n : Scalar(0);
      for (Eigen::Index k = 0; k < logp.rows(); ++k) {
        const Scalar onehot = k == a ? Scalar(1) : Scalar(0);
        const Scalar g_policy = dratio * ratio * (onehot - probs(k, i));
        const Scalar g_entropy = ent_coef * inv_n * probs(k, i) * (logp(k, i) + entropy);
        dlogits(k, i) = g_policy + g_entropy;
      }
      dvalues(i) = v_coef * Scalar(2) * err * inv_n;
    }
  }
  out.total = out.policy + v_coef * out.value - ent_coef * out.entropy;
  if (with_gradient) out.gradient = net.backward(fwd, dlogits, dvalues);
  return out;
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t steps = 0;
};

/// Runs cfg.epochs_per_batch passes of shuffled minibatch Adam steps and
/// returns the updated network; `net` itself is not modified. Throws
/// NonFiniteGradient before applying a step whose gradient is not finite.
PolicyNet ppo_update(const PolicyNet& net, const RolloutBatch& batch, const PpoConfig& cfg, AdamState& adam, Rng& rng);

/// Greedy (argmax) router over a trained network; ties go to Continue.
class AggRouter final : public Router {
 public:
  AggRouter(const PolicyNet& net, FeatureScaling scaling) : net_(net), scaling_(scaling) {}
  RoutingAction decide(const AggFeatures& feats, const TraceState&) override;

 private:
  const PolicyNet& net_;
  FeatureScaling scaling_;
};

/// (logits, value) for one feature vector.
std::pair<Eigen::Vector2d, double> net_forward(const PolicyNet& net, const AggFeatures& feats,
                                               const FeatureScaling& scaling);

struct IterationMetrics {
  int iteration = 0;
  double mean_return = 0.0;
  double accuracy = 0.0;
  double mean_strong_tokens = 0.0;
  double regen_rate = 0.0;
};

struct TrainRun {
  double lambda_cost = 0.0;
  std::uint64_t seed = 0;
  PpoConfig config;
  std::vector<IterationMetrics> metrics;
};

struct Rollouts {
  RolloutBatch batch;
  IterationMetrics stats;
};

/// Samples cfg.rollout_episodes episodes with the stochastic policy and
/// computes GAE advantages and returns. The cost penalty is charged at the
/// regeneration step, the task reward at the final step.
Rollouts collect_rollouts(const PolicyNet& net, const EnvConfig& env, double lambda_cost, const PpoConfig& cfg,
                          std::uint64_t seed);

std::pair<PolicyNet, TrainRun> train_agg(const EnvConfig& env, double lambda_cost, const PpoConfig& cfg,
                                         std::uint64_t seed);

void write_metrics_csv(std::ostream& out, const TrainRun& run);

/// JSON checkpoint: architecture, scaling and the flat parameter array.
nlohmann::json checkpoint_to_json(const PolicyNet& net, const FeatureScaling& scaling);
std::pair<PolicyNet, FeatureScaling> checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const PolicyNet& net, const FeatureScaling& scaling);
std::pair<PolicyNet, FeatureScaling> load_checkpoint(const std::string& path);

/// Geometric lambda ladder from lo to hi inclusive.
std::vector<double> geometric_ladder(double lo, double hi, int count);

}  // namespace steproute
