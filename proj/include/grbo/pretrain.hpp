#pragma once

#include "grbo/policy.hpp"
#include "grbo/scenario.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

namespace grbo {

/// (features, ground-truth token) pairs from scenario demonstrations, one column per sample.
struct NtpBatch {
  Eigen::MatrixXd features;     // dim x n
  std::vector<int> tokens;      // n
  std::vector<double> weights;  // n, 1 / T_i of the sample's agent
  std::vector<std::uint32_t> scenario_index;
  std::vector<int> agent_id;
  std::vector<int> time_step;

  std::size_t size() const { return tokens.size(); }
  NtpBatch select(const std::vector<std::size_t>& columns) const;
};

/// One sample per (agent, t) for t in [0, T) of every demo: features from the GT history up to t,
/// token from tokenize_transition(s_t, s_t+1).
NtpBatch build_ntp_batch(const std::vector<Scenario>& scenarios, const SimConfig& sim,
                         const TokenVocabulary& vocab, const FeatureConfig& features);

struct NtpResult {
  double loss = 0.0;
  ParamSet gradient;  // of the loss (descent direction is its negative)
  double accuracy = 0.0;
};

/// Weighted next-token negative log-likelihood -1/N sum_i 1/T sum_t log pi(a_gt | .), the exact
/// gradient of that scalar, and argmax accuracy. Throws std::invalid_argument on an empty batch.
NtpResult ntp_loss_and_grad(const PolicyModel& model, const NtpBatch& batch);

double token_accuracy(const PolicyModel& model, const NtpBatch& batch);

struct PretrainConfig {
  int epochs = 32;
  int batch_size = 256;
  double learning_rate = 3e-4;
  int hidden = 128;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double mean_loss = 0.0;
  double token_accuracy = 0.0;
};

struct PretrainResult {
  PolicyModel model;
  PolicyModel reference;  // frozen copy of the final model, the KL anchor for post-training
  OptimizerState optimizer;
  std::vector<PretrainEpoch> log;
};

/// Minibatch Adam over the shuffled NTP samples. Throws std::invalid_argument when no scenario
/// carries a demonstration.
PretrainResult pretrain(const std::vector<Scenario>& scenarios, const SimConfig& sim,
                        const PretrainConfig& cfg, const TokenVocabulary& vocab = {},
                        const FeatureConfig& features = {},
                        const std::function<void(const PretrainEpoch&)>& on_epoch = {});

}  // namespace grbo
