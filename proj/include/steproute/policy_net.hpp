#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "steproute/error.hpp"
#include "steproute/trace.hpp"

namespace steproute {

struct NetArchitecture {
  int input = 4;
  std::vector<int> hidden = {128, 128};
  int actions = 2;

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    int prev = input;
    for (int h : hidden) {
      n += static_cast<Eigen::Index>(h) * prev + h;
      prev = h;
    }
    return n + static_cast<Eigen::Index>(actions) * prev + actions + prev + 1;
  }

  bool operator==(const NetArchitecture&) const = default;
};

/// Input scaling: scores pass through, tokens / token_scale, step / max_steps.
struct FeatureScaling {
  double token_scale = 100.0;
  double max_steps = kDefaultMaxSteps;

  template <typename Scalar = double>
  Eigen::Matrix<Scalar, 4, 1> apply(const AggFeatures& f) const {
    Eigen::Matrix<Scalar, 4, 1> x;
    x << Scalar(f.current_score), Scalar(f.min_prev_score), Scalar(f.current_tokens / token_scale),
        Scalar(f.step_index / max_steps);
    return x;
  }
};

/// Tanh MLP trunk with a logit head and a value head over one flat parameter
/// vector. Layout: for each hidden layer W (out x in, column-major) then b;
/// then actor W, b; then critic W, b.
template <typename Scalar>
class PolicyNetT {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using MatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<const Vector>;

  PolicyNetT() : PolicyNetT(NetArchitecture{}) {}
  explicit PolicyNetT(NetArchitecture arch) : arch_(std::move(arch)), params_(Vector::Zero(arch_.parameter_count())) {}
  PolicyNetT(NetArchitecture arch, Vector params) : arch_(std::move(arch)), params_(std::move(params)) {
    if (params_.size() != arch_.parameter_count()) {
      throw Error(ErrorCode::InvariantViolation, "parameter count does not match architecture");
    }
  }

  const NetArchitecture& architecture() const { return arch_; }
  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }

  template <typename Other>
  PolicyNetT<Other> cast() const {
    return PolicyNetT<Other>(arch_, params_.template cast<Other>());
  }

  /// Orthogonal layer init; `head_gain` scales the actor head, hidden layers use sqrt(2).
  void initialize(std::uint64_t seed, Scalar head_gain = Scalar(0.01), Scalar value_gain = Scalar(1)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto orthogonal = [&](int rows, int cols, Scalar gain) {
      Eigen::MatrixXd g(std::max(rows, cols), std::max(rows, cols));
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
      Eigen::MatrixXd q = qr.householderQ();
      return (q.topLeftCorner(rows, cols) * static_cast<double>(gain)).template cast<Scalar>().eval();
    };
    params_.setZero();
    Eigen::Index off = 0;
    int prev = arch_.input;
    for (int h : arch_.hidden) {
      matrix_at(off, h, prev) = orthogonal(h, prev, Scalar(std::sqrt(2.0)));
      off += static_cast<Eigen::Index>(h) * prev + h;
      prev = h;
    }
    matrix_at(off, arch_.actions, prev) = orthogonal(arch_.actions, prev, head_gain);
    off += static_cast<Eigen::Index>(arch_.actions) * prev + arch_.actions;
    matrix_at(off, 1, prev) = orthogonal(1, prev, value_gain);
  }

  /// Activations of one forward pass over a batch (inputs are columns).
  struct Forward {
    std::vector<Matrix> activations;  // [0] = input, then each hidden layer output
    Matrix logits;                    // actions x N
    RowVector values;                 // 1 x N
  };

  Forward forward(const Matrix& inputs) const {
    if (inputs.rows() != arch_.input) throw Error(ErrorCode::NonFiniteInput, "input dimension mismatch");
    if (!inputs.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite network input");
    Forward out;
    out.activations.reserve(arch_.hidden.size() + 1);
    out.activations.push_back(inputs);
    Eigen::Index off = 0;
    int prev = arch_.input;
    for (int h : arch_.hidden) {
      const auto w = cmatrix_at(off, h, prev);
      const auto b = cvector_at(off + static_cast<Eigen::Index>(h) * prev, h);
      out.activations.push_back(((w * out.activations.back()).colwise() + b).array().tanh().matrix());
      off += static_cast<Eigen::Index>(h) * prev + h;
      prev = h;
    }
    const auto& last = out.activations.back();
    const auto wa = cmatrix_at(off, arch_.actions, prev);
    const auto ba = cvector_at(off + static_cast<Eigen::Index>(arch_.actions) * prev, arch_.actions);
    out.logits = (wa * last).colwise() + ba;
    off += static_cast<Eigen::Index>(arch_.actions) * prev + arch_.actions;
    const auto wv = cmatrix_at(off, 1, prev);
    const Scalar bv = params_[off + prev];
    out.values = ((wv * last).array() + bv).matrix();
    return out;
  }

  /// Gradient of a scalar loss w.r.t. the flat parameters, given dL/dlogits and dL/dvalues.
  Vector backward(const Forward& fwd, const Matrix& dlogits, const RowVector& dvalues) const {
    Vector grad = Vector::Zero(params_.size());
    const int layers = static_cast<int>(arch_.hidden.size());
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    int prev = arch_.input;
    for (int h : arch_.hidden) {
      offsets.push_back(off);
      off += static_cast<Eigen::Index>(h) * prev + h;
      prev = h;
    }
    const Matrix& last = fwd.activations.back();
    // Heads.
    const Eigen::Index actor_off = off;
    Eigen::Map<Matrix>(grad.data() + actor_off, arch_.actions, prev) = dlogits * last.transpose();
    grad.segment(actor_off + static_cast<Eigen::Index>(arch_.actions) * prev, arch_.actions) = dlogits.rowwise().sum();
    const Eigen::Index critic_off = actor_off + static_cast<Eigen::Index>(arch_.actions) * prev + arch_.actions;
    Eigen::Map<Matrix>(grad.data() + critic_off, 1, prev) = dvalues * last.transpose();
    grad[critic_off + prev] = dvalues.sum();

    Matrix delta = cmatrix_at(actor_off, arch_.actions, prev).transpose() * dlogits +
                   cmatrix_at(critic_off, 1, prev).transpose() * dvalues;
    for (int l = layers - 1; l >= 0; --l) {
      const int h = arch_.hidden[l];
      const int in = l == 0 ? arch_.input : arch_.hidden[l - 1];
      const Matrix& act = fwd.activations[l + 1];
      delta = (delta.array() * (Scalar(1) - act.array().square())).matrix();
      const Matrix& below = fwd.activations[l];
      Eigen::Map<Matrix>(grad.data() + offsets[l], h, in) = delta * below.transpose();
      grad.segment(offsets[l] + static_cast<Eigen::Index>(h) * in, h) = delta.rowwise().sum();
      if (l > 0) delta = cmatrix_at(offsets[l], h, in).transpose() * delta;
    }
    return grad;
  }

 private:
  Eigen::Map<Matrix> matrix_at(Eigen::Index off, int rows, int cols) {
    return Eigen::Map<Matrix>(params_.data() + off, rows, cols);
  }
  MatrixMap cmatrix_at(Eigen::Index off, int rows, int cols) const { return MatrixMap(params_.data() + off, rows, cols); }
  VectorMap cvector_at(Eigen::Index off, int n) const { return VectorMap(params_.data() + off, n); }

  NetArchitecture arch_;
  Vector params_;
};

using PolicyNet = PolicyNetT<double>;

/// Numerically stable log-softmax of each column.
template <typename Derived>
auto log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar m = logits.col(j).maxCoeff();
    const Scalar lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

/// Generalized advantage estimation. delta_t = r_t + discount * V_{t+1} - V_t,
/// A_t = delta_t + discount * gae_lambda * A_{t+1}, with V_T = terminal_value.
template <typename Scalar>
std::vector<Scalar> compute_gae(const std::vector<Scalar>& rewards, const std::vector<Scalar>& values,
                                Scalar terminal_value, Scalar gae_lambda, Scalar discount) {
  if (rewards.size() != values.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(rewards.size()) + " rewards vs " + std::to_string(values.size()) + " values");
  }
  std::vector<Scalar> adv(rewards.size());
  Scalar next_adv = Scalar(0);
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const Scalar next_value = i + 1 < values.size() ? values[i + 1] : terminal_value;
    const Scalar delta = rewards[i] + discount * next_value - values[i];
    next_adv = delta + discount * gae_lambda * next_adv;
    adv[i] = next_adv;
  }
  return adv;
}

}  // namespace steproute
