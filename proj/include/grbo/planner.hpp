#pragma once

#include "grbo/demonstrator.hpp"
#include "grbo/rollout.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace grbo {

struct PlannerConfig {
  int rollouts = 8;        // N
  int warm_rollouts = 4;   // N_w
  int warm_steps = 2;      // T_w
  int top_k = 5;           // K
  double w_collision = 100.0;
  double w_accel = 1.0;
  int plan_horizon = 20;   // T_p
  double lambda_heading = 2.0;  // m / rad
  double lambda_speed = 0.5;    // s
  int replan_period = 1;

  void validate(int vocab_size) const;
};

/// The previously selected plan: ego states stamped with absolute step indices.
struct PlanState {
  std::vector<AgentState> states;
  std::vector<int> times;  // strictly increasing
  std::vector<int> executed_tokens;

  bool empty() const { return states.empty(); }
  /// The plan's state at absolute time `t`, or nullptr when the plan does not cover it.
  const AgentState* at(int t) const;
};

/// Alignment distance between a candidate next state and the plan's state at the same time.
double alignment_distance(const AgentState& candidate, const AgentState& target,
                          const PlannerConfig& cfg);

/// Deterministic Warm-K pick among the top-K tokens: the candidate whose successor best aligns with
/// `target`; ties go to the more probable token, then the lower index. nullopt when there is no
/// aligned state, in which case the caller falls back to Top-K.
std::optional<TokenSample> warm_k_select(const Eigen::VectorXd& log_probs, const AgentState& current,
                                         const AgentState* target, int k, const PlannerConfig& cfg,
                                         const TokenVocabulary& vocab, const SimConfig& sim);
std::optional<TokenSample> warm_k_select(const PolicyModel& model, const FeatureVector& features,
                                         const AgentState& current, const AgentState* target,
                                         const PlannerConfig& cfg, const SimConfig& sim);

struct PlanRollout {
  Rollout rollout;
  bool warm = false;
  std::vector<double> ego_accel;  // |realized accel| per step
  double score = 0.0;
};

/// Eq. 7: -(1/T) sum_t (w_c Colli_t + w_a Accel_t) with Colli_t = collided[t] for t in [1, T] and
/// Accel_t = accel[t - 1].
double score_rollout(const std::vector<std::uint8_t>& collided, const std::vector<double>& accel,
                     const PlannerConfig& cfg);

/// N rollouts of T_p steps from the live scene. The ego is agent 0; the first N_w rollouts warm-start
/// the ego for T_w steps against `plan`, every other choice is Top-K. Rollout n uses the stream
/// seeded by the n-th draw of rng.
std::vector<PlanRollout> generate_plan_rollouts(const PolicyModel& model, const FeatureContext& ctx,
                                                const SceneState& scene, const PlanState& plan,
                                                const PlannerConfig& cfg, Rng& rng);

struct RhpDecision {
  TokenSample ego_action;
  int selected = 0;
  std::vector<double> scores;
  std::vector<bool> warm;
};

/// Best-of-N with ties to warm rollouts, then the lowest index. Stores the selected ego trajectory
/// as the new plan and logs the executed token.
RhpDecision rhp_step(const PolicyModel& model, const FeatureContext& ctx, const SceneState& scene,
                     PlanState& plan, const PlannerConfig& cfg, Rng& rng);

struct EpisodeStep {
  int time = 0;
  int ego_token = 0;
  int selected = -1;  // -1 when the ego was scripted
  std::vector<double> scores;
};

struct Episode {
  std::string scenario_id;
  std::vector<Trajectory> states;           // [agent][executed + 1]
  std::vector<std::uint8_t> ego_collided;   // [executed + 1]
  std::vector<double> ego_accel;            // [executed]
  std::vector<EpisodeStep> steps;
  double progress = 0.0;                    // terminal progress of the ego
  bool collided = false;
  bool goal_reached = false;

  double mean_abs_accel() const;
};

/// Closed-loop episode: the ego replans every replan_period steps with rhp_step, others sample Top-K
/// from the model. Ends after the scenario horizon, on an ego collision, or at progress >= 0.99.
Episode run_closed_loop(const PolicyModel& model, const Scenario& scenario, const SimConfig& sim,
                        const PlannerConfig& cfg, std::uint64_t seed);

/// Sanity harness: the ego follows the noise-free demonstrator instead of the planner.
Episode run_scripted_ego(const PolicyModel& model, const Scenario& scenario, const SimConfig& sim,
                         const PlannerConfig& cfg, std::uint64_t seed,
                         const DemonstratorParams& params = {});

std::string episode_trace_json(const Episode& episode, const std::string& provenance_json);

}  // namespace grbo
