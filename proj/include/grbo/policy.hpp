#pragma once

#include "grbo/features.hpp"
#include "grbo/rng.hpp"
#include "grbo/tokenizer.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace grbo {

/// Parameters (or a same-shaped gradient) of the two-layer tanh policy network.
template <typename Scalar>
struct MlpParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix w1;  // hidden x input
  Vector b1;  // hidden
  Matrix w2;  // vocab x hidden
  Vector b2;  // vocab

  static MlpParams zeros(Eigen::Index input, Eigen::Index hidden, Eigen::Index output) {
    return {Matrix::Zero(hidden, input), Vector::Zero(hidden), Matrix::Zero(output, hidden),
            Vector::Zero(output)};
  }
  MlpParams zeros_like() const { return zeros(w1.cols(), w1.rows(), w2.rows()); }

  Eigen::Index size() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::Index output_dim() const { return w2.rows(); }

  bool same_shape(const MlpParams& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows();
  }

  /// Applies fn(tensor, other_tensor) member-wise in the fixed order w1, b1, w2, b2.
  template <typename Fn>
  void zip(const MlpParams& other, Fn&& fn) {
    fn(w1, other.w1);
    fn(b1, other.b1);
    fn(w2, other.w2);
    fn(b2, other.b2);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
  }
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
  }

  MlpParams& operator+=(const MlpParams& o) {
    zip(o, [](auto& a, const auto& b) { a += b; });
    return *this;
  }
  MlpParams& operator-=(const MlpParams& o) {
    zip(o, [](auto& a, const auto& b) { a -= b; });
    return *this;
  }
  MlpParams& operator*=(Scalar s) {
    for_each([s](auto& a) { a *= s; });
    return *this;
  }
  friend MlpParams operator-(MlpParams a, const MlpParams& b) { return a -= b; }
  friend MlpParams operator+(MlpParams a, const MlpParams& b) { return a += b; }
  friend MlpParams operator*(Scalar s, MlpParams a) { return a *= s; }

  Scalar max_abs() const {
    Scalar m = 0;
    for_each([&m](const auto& a) { if (a.size() > 0) m = std::max(m, a.cwiseAbs().maxCoeff()); });
    return m;
  }
  Scalar squared_norm() const {
    Scalar s = 0;
    for_each([&s](const auto& a) { s += a.squaredNorm(); });
    return s;
  }
  bool all_finite() const {
    bool ok = true;
    for_each([&ok](const auto& a) { ok = ok && a.allFinite(); });
    return ok;
  }

  /// Flat copy in (w1, b1, w2, b2) column-major order.
  Vector flatten() const {
    Vector out(size());
    Eigen::Index k = 0;
    for_each([&](const auto& a) {
      out.segment(k, a.size()) = Eigen::Map<const Vector>(a.data(), a.size());
      k += a.size();
    });
    return out;
  }
  void assign_flat(const Vector& flat) {
    Eigen::Index k = 0;
    for_each([&](auto& a) {
      Eigen::Map<Vector>(a.data(), a.size()) = flat.segment(k, a.size());
      k += a.size();
    });
  }
};

using ParamSet = MlpParams<double>;

/// Numerically stable log-softmax of a logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

/// Categorical policy pi(token | features) over a motion-token vocabulary.
struct PolicyModel {
  ParamSet params;
  TokenVocabulary vocab;
  FeatureConfig features;

  /// All-zero parameters: the uniform policy.
  static PolicyModel zeros(const TokenVocabulary& vocab, const FeatureConfig& features,
                           int hidden = 128);
  /// Glorot-style uniform initialisation of weights, zero biases.
  static PolicyModel random(const TokenVocabulary& vocab, const FeatureConfig& features,
                            int hidden, Rng& rng, double gain = 1.0);

  int vocab_size() const { return vocab.size(); }
  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;
};

struct ForwardPass {
  Eigen::VectorXd hidden;
  Eigen::VectorXd log_probs;
};

ForwardPass forward(const PolicyModel& model, const FeatureVector& features);
Eigen::VectorXd logits(const PolicyModel& model, const FeatureVector& features);
/// log pi(c | features) for every token c.
Eigen::VectorXd log_probs(const PolicyModel& model, const FeatureVector& features);

/// grad += dlogits-weighted backprop through softmax-free head: d/dphi of dlogits . z(phi).
void accumulate_logit_grad(const PolicyModel& model, const FeatureVector& features,
                           const ForwardPass& pass, const Eigen::VectorXd& dlogits,
                           ParamSet& grad);

/// grad += coef * d log pi(token | features) / dphi.
void accumulate_score_grad(const PolicyModel& model, const FeatureVector& features,
                           const ForwardPass& pass, int token, double coef, ParamSet& grad);

/// Exact gradient of log pi(token | features) with respect to every parameter.
ParamSet grad_log_prob(const PolicyModel& model, const FeatureVector& features, MotionToken token);

/// Column-batched forward pass: one sample per column of x.
struct BatchForward {
  Eigen::MatrixXd hidden;     // H x n
  Eigen::MatrixXd log_probs;  // V x n
};

BatchForward forward_batch(const PolicyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// grad += backprop of sum_c dlogits.col(c) . z(x.col(c)).
void accumulate_batch_logit_grad(const PolicyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const BatchForward& pass, const Eigen::MatrixXd& dlogits,
                                 ParamSet& grad);

struct TokenSample {
  MotionToken token;
  double log_prob = 0.0;  // under the full, un-truncated distribution
};

/// Indices of the K most probable tokens, most probable first, ties to the lower index.
std::vector<int> top_k_indices(const Eigen::VectorXd& log_probs, int k);

/// Samples from the renormalised top-K set using exactly one draw from rng.
/// Throws std::invalid_argument unless 1 <= k <= |V|.
TokenSample sample_top_k(const Eigen::VectorXd& log_probs, int k, Rng& rng);
TokenSample sample_top_k(const PolicyModel& model, const FeatureVector& features, int k, Rng& rng);

/// Shannon entropy divided by log |V|.
double entropy_normalized(const Eigen::VectorXd& log_probs);
double entropy_normalized(const PolicyModel& model, const FeatureVector& features);

/// Adam moments and hyperparameters.
struct OptimizerState {
  ParamSet m;
  ParamSet v;
  std::int64_t step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_model(const PolicyModel& model, double learning_rate);
};

/// One Adam step that descends along `gradient`.
void adam_step(PolicyModel& model, const ParamSet& gradient, OptimizerState& state);

}  // namespace grbo
