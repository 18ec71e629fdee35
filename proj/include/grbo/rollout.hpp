#pragma once

#include "grbo/features.hpp"
#include "grbo/policy.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

namespace grbo {

/// Live scene: the recent states of every agent (back() is now) and the absolute step index.
struct SceneState {
  std::vector<Trajectory> recent;  // [agent], oldest first
  int time = 0;

  std::vector<AgentState> current() const;
  /// Appends next states and trims each history to `keep` entries.
  void advance(const std::vector<AgentState>& next, std::size_t keep);
};

SceneState initial_scene(const Scenario& scenario);

/// Picks the token of one agent at one step. Must draw exactly once from rng so every selection
/// mode shares the same stream layout.
using TokenChooser = std::function<TokenSample(std::size_t agent, int step, const AgentState& state,
                                               const Eigen::VectorXd& log_probs, Rng& rng)>;

TokenChooser top_k_chooser(int k);

/// One autoregressive multi-agent rollout. Step t maps states[.][t] to states[.][t + 1].
struct Rollout {
  std::vector<Trajectory> states;               // [agent][steps + 1]
  std::vector<std::vector<int>> tokens;         // [agent][steps]
  std::vector<std::vector<double>> log_probs;   // [agent][steps], full-distribution log pi
  std::vector<std::vector<std::uint8_t>> collided;  // [agent][steps + 1], index 0 always 0
  std::vector<Eigen::MatrixXd> features;        // [agent], dim x steps when recorded
  double entropy_sum = 0.0;                     // of normalized entropy over (agent, step)

  std::size_t num_agents() const { return states.size(); }
  int steps() const { return tokens.empty() ? 0 : static_cast<int>(tokens.front().size()); }
  bool agent_collided(std::size_t agent) const;
  /// First step index (>= 1) at which the agent overlaps another, or -1.
  int first_collision(std::size_t agent) const;
};

struct RolloutOptions {
  int steps = 80;
  bool record_features = true;
  bool record_entropy = true;
};

/// Every agent samples from `model` through `chooser`; agents act simultaneously, in index order for
/// rng consumption.
Rollout simulate(const PolicyModel& model, const FeatureContext& ctx, const SceneState& start,
                 const RolloutOptions& options, const TokenChooser& chooser, Rng& rng);

/// Marks pairwise overlaps of `scene` into per-agent flags (both participants).
void mark_collisions(const std::vector<AgentState>& scene, std::vector<std::uint8_t>& flags);

/// Stable 64-bit key of a scenario id, used to derive order-independent rng streams.
std::uint64_t scenario_key(const Scenario& scenario);

}  // namespace grbo
