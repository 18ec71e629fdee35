#include "grbo/policy.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

namespace grbo {

PolicyModel PolicyModel::zeros(const TokenVocabulary& vocab, const FeatureConfig& features,
                               int hidden) {
  return {ParamSet::zeros(features.dim(), hidden, vocab.size()), vocab, features};
}

PolicyModel PolicyModel::random(const TokenVocabulary& vocab, const FeatureConfig& features,
                                int hidden, Rng& rng, double gain) {
  PolicyModel m = zeros(vocab, features, hidden);
  const auto fill = [&rng, gain](Eigen::MatrixXd& w) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng, -limit, limit);
  };
  fill(m.params.w1);
  fill(m.params.w2);
  return m;
}

std::uint64_t PolicyModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  params.for_each([&h](const auto& a) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.data());
    for (std::size_t k = 0; k < static_cast<std::size_t>(a.size()) * sizeof(double); ++k) {
      h ^= bytes[k];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

ForwardPass forward(const PolicyModel& model, const FeatureVector& features) {
  ForwardPass pass;
  pass.hidden = (model.params.w1 * features + model.params.b1).array().tanh().matrix();
  pass.log_probs = log_softmax(model.params.w2 * pass.hidden + model.params.b2);
  return pass;
}

Eigen::VectorXd logits(const PolicyModel& model, const FeatureVector& features) {
  const Eigen::VectorXd h = (model.params.w1 * features + model.params.b1).array().tanh().matrix();
  return model.params.w2 * h + model.params.b2;
}

Eigen::VectorXd log_probs(const PolicyModel& model, const FeatureVector& features) {
  return forward(model, features).log_probs;
}

void accumulate_logit_grad(const PolicyModel& model, const FeatureVector& features,
                           const ForwardPass& pass, const Eigen::VectorXd& dlogits,
                           ParamSet& grad) {
  grad.w2.noalias() += dlogits * pass.hidden.transpose();
  grad.b2 += dlogits;
  const Eigen::VectorXd dpre =
      ((model.params.w2.transpose() * dlogits).array() * (1.0 - pass.hidden.array().square()))
          .matrix();
  grad.w1.noalias() += dpre * features.transpose();
  grad.b1 += dpre;
}

void accumulate_score_grad(const PolicyModel& model, const FeatureVector& features,
                           const ForwardPass& pass, int token, double coef, ParamSet& grad) {
  if (coef == 0.0) return;
  // d log softmax_c / d z = onehot(c) - p
  Eigen::VectorXd dlogits = -coef * pass.log_probs.array().exp().matrix();
  dlogits[token] += coef;
  accumulate_logit_grad(model, features, pass, dlogits, grad);
}

ParamSet grad_log_prob(const PolicyModel& model, const FeatureVector& features, MotionToken token) {
  if (token.index < 0 || token.index >= model.vocab_size())
    throw std::out_of_range("grad_log_prob: token outside vocabulary");
  ParamSet g = model.params.zeros_like();
  accumulate_score_grad(model, features, forward(model, features), token.index, 1.0, g);
  return g;
}

BatchForward forward_batch(const PolicyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const ParamSet& p = model.params;
  BatchForward out;
  out.hidden = ((p.w1 * x).colwise() + p.b1).array().tanh().matrix();
  const Eigen::MatrixXd z = (p.w2 * out.hidden).colwise() + p.b2;
  out.log_probs.resize(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) out.log_probs.col(c) = log_softmax(z.col(c));
  return out;
}

void accumulate_batch_logit_grad(const PolicyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const BatchForward& pass, const Eigen::MatrixXd& dlogits,
                                 ParamSet& grad) {
  const ParamSet& p = model.params;
  grad.w2.noalias() += dlogits * pass.hidden.transpose();
  grad.b2 += dlogits.rowwise().sum();
  const Eigen::MatrixXd dpre =
      ((p.w2.transpose() * dlogits).array() * (1.0 - pass.hidden.array().square())).matrix();
  grad.w1.noalias() += dpre * x.transpose();
  grad.b1 += dpre.rowwise().sum();
}

std::vector<int> top_k_indices(const Eigen::VectorXd& log_probs, int k) {
  std::vector<int> idx(static_cast<std::size_t>(log_probs.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&log_probs](int a, int b) {
    return log_probs[a] > log_probs[b] || (log_probs[a] == log_probs[b] && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

TokenSample sample_top_k(const Eigen::VectorXd& log_probs, int k, Rng& rng) {
  if (k < 1 || k > log_probs.size())
    throw std::invalid_argument("sample_top_k: K=" + std::to_string(k) + " outside [1, |V|]");
  const std::vector<int> top = top_k_indices(log_probs, k);
  const double u = uniform01(rng);
  // Relative to the best token so the renormalisation never underflows.
  const double ref = log_probs[top.front()];
  double total = 0.0;
  for (int c : top) total += std::exp(log_probs[c] - ref);
  double acc = 0.0;
  const double target = u * total;
  for (int c : top) {
    acc += std::exp(log_probs[c] - ref);
    if (target < acc) return {{c}, log_probs[c]};
  }
  return {{top.back()}, log_probs[top.back()]};
}

TokenSample sample_top_k(const PolicyModel& model, const FeatureVector& features, int k, Rng& rng) {
  return sample_top_k(log_probs(model, features), k, rng);
}

double entropy_normalized(const Eigen::VectorXd& log_probs) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < log_probs.size(); ++c) {
    const double p = std::exp(log_probs[c]);
    if (p > 0.0) h -= p * log_probs[c];
  }
  return h / std::log(static_cast<double>(log_probs.size()));
}

double entropy_normalized(const PolicyModel& model, const FeatureVector& features) {
  return entropy_normalized(log_probs(model, features));
}

OptimizerState OptimizerState::for_model(const PolicyModel& model, double learning_rate) {
  OptimizerState s;
  s.m = model.params.zeros_like();
  s.v = model.params.zeros_like();
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(PolicyModel& model, const ParamSet& gradient, OptimizerState& state) {
  if (!state.m.same_shape(gradient) || !model.params.same_shape(gradient))
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double lr = state.learning_rate;
  const auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.epsilon);
  };
  update(model.params.w1, gradient.w1, state.m.w1, state.v.w1);
  update(model.params.b1, gradient.b1, state.m.b1, state.v.b1);
  update(model.params.w2, gradient.w2, state.m.w2, state.v.w2);
  update(model.params.b2, gradient.b2, state.m.b2, state.v.b2);
}

}  // namespace grbo
