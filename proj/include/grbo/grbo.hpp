#pragma once

#include "grbo/rollout.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace grbo {

struct TrainConfig {
  int group_size = 8;        // G
  double beta = 0.1;         // KL weight
  double clip_low = 0.2;     // epsilon_l
  double clip_high = 0.4;    // epsilon_h
  int warm_k_steps = 2;      // T_w, carried for the planner
  int batch_size = 16;       // scenarios per iteration
  int epochs = 10;
  int top_k = 5;
  double rl_fraction = 0.10;
  int inner_updates = 1;
  double learning_rate = 1e-4;
  bool reinforce_kl = false;  // REINFORCE only: keep the beta-KL term
  std::uint64_t seed = 0;

  /// Batch 80 as used at full scale; everything else matches the defaults.
  static TrainConfig full_scale();
  /// Throws std::invalid_argument when an invariant is violated.
  void validate(int vocab_size) const;
};

/// G rollouts of one scenario sampled from pi_old, with outcome rewards and advantages.
struct RolloutGroup {
  const Scenario* scenario = nullptr;
  int vocab_size = 0;
  std::vector<Rollout> rollouts;                 // [j]
  std::vector<std::vector<double>> rewards;      // [j][agent]
  std::vector<std::vector<double>> advantages;   // [j][agent]

  int group_size() const { return static_cast<int>(rollouts.size()); }
};

/// Rollout j draws from its own stream, seeded by the j-th draw of `rng`.
RolloutGroup sample_rollout_group(const PolicyModel& model_old, const FeatureContext& ctx, int G,
                                  int K, Rng& rng);

/// R = -1 for every agent that overlaps any other agent at some t in [1, T], else 0.
std::vector<std::vector<double>> compute_rewards(const RolloutGroup& group);

/// A[j][i] = R[j][i] - mean_j R[j][i]; no std normalisation.
std::vector<std::vector<double>> compute_group_advantages(
    const std::vector<std::vector<double>>& rewards);

/// k3 estimator x - log x - 1 with x = pi_ref / pi_cur at the sampled token.
double kl_estimate(double logp_cur, double logp_ref);

struct ClippedTerm {
  double value = 0.0;
  double dvalue_dlogp = 0.0;  // derivative with respect to log pi_phi
};

/// min(r A, clip(r, 1 - clip_low, 1 + clip_high) A) and its derivative in log pi_phi. The
/// unclipped branch is taken on ties.
ClippedTerm clipped_surrogate(double ratio, double advantage, double clip_low, double clip_high);

struct SurrogateResult {
  double objective = 0.0;   // J, to be maximised
  ParamSet gradient;        // ascent direction dJ/dphi
  double mean_kl = 0.0;     // mean k3 estimate over sampled tokens
  double clip_fraction = 0.0;
};

/// Eq. 2 surrogate averaged 1/G 1/N 1/T per group and then over groups. pi_old enters through the
/// log-probs recorded at sampling time. Throws std::invalid_argument if a group was sampled with a
/// different vocabulary.
SurrogateResult grbo_surrogate_and_grad(const PolicyModel& model, const PolicyModel& reference,
                                        std::span<const RolloutGroup> groups,
                                        const TrainConfig& cfg);

/// Unclipped r A surrogate with whatever advantages the groups carry; the beta-KL term is included
/// only when cfg.reinforce_kl is set.
SurrogateResult reinforce_surrogate_and_grad(const PolicyModel& model, const PolicyModel& reference,
                                             std::span<const RolloutGroup> groups,
                                             const TrainConfig& cfg);

/// Batch-mean baseline: A = R - mean over every (group, rollout, agent) in the batch.
void assign_batch_baseline_advantages(std::span<RolloutGroup> groups);

struct TrainLogRow {
  int iter = 0;
  int epoch = 0;
  double mean_reward = 0.0;
  double collision_rate = 0.0;
  double norm_entropy = 0.0;
  double mean_kl = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
};

std::string train_log_csv(const std::vector<TrainLogRow>& rows);

struct TrainResult {
  PolicyModel model;
  OptimizerState optimizer;
  std::vector<TrainLogRow> log;
  std::uint64_t reference_checksum = 0;
};

using EpochCallback =
    std::function<void(int epoch, const PolicyModel& model, const OptimizerState& optimizer)>;

/// Indices of the RL subset: ceil(n * fraction) scenarios after a seeded shuffle.
std::vector<std::size_t> select_rl_subset(std::size_t n, double fraction, std::uint64_t seed);

/// Alg. 1. The reference policy is frozen at `init`; one log row per inner update.
TrainResult grbo_train(const PolicyModel& init, const std::vector<Scenario>& scenarios,
                       const SimConfig& sim, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

/// Same loop and budget with batch-mean-baseline advantages and no clipping.
TrainResult reinforce_train(const PolicyModel& init, const std::vector<Scenario>& scenarios,
                            const SimConfig& sim, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

}  // namespace grbo
