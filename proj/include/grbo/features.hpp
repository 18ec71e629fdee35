#pragma once

#include "grbo/scenario.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace grbo {

using FeatureVector = Eigen::VectorXd;

/// Layout (default dim 81):
///   [0]       speed / v_max
///   [1, 7)    last 3 implied commands, newest first (accel / 4, yaw rate / 0.5)
///   [7, 11)   goal distance, goal bearing, goal heading error, remaining arc to goal
///   [11, 13)  lateral offset and heading error against the route
///   [13, 22)  route samples at 5/10/20 m ahead in ego frame (x, y, heading)
///   [22, 25)  route curvature at 5/10/20 m ahead
///   [25, 28)  route progress, ego length, ego width
///   [28, 76)  4 nearest neighbours x (present, x, y, cos dh, sin dh, speed, cpa dist, cpa time,
///             path conflict present, ego distance to it, ETA difference, neighbour ETA)
///   [76, 81)  nearest in-corridor leader (present, gap, along-route speed, closing speed,
///             closing speed / gap)
struct FeatureConfig {
  int command_history = 3;
  int max_neighbors = 4;
  double neighbor_radius = 60.0;  // m, agents further away are treated as absent
  double cpa_horizon = 4.0;       // s, constant-velocity closest-approach window

  int dim() const { return 1 + 2 * command_history + 4 + 2 + 9 + 3 + 3 + 12 * max_neighbors + 5; }
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

/// Everything feature extraction needs about one scenario that does not change over a rollout.
struct FeatureContext {
  FeatureContext(const Scenario& scenario, const SimConfig& sim, FeatureConfig cfg = {});

  const Scenario* scenario;
  SimConfig sim;
  FeatureConfig cfg;
  ScenarioGeometry geometry;
};

/// Core extraction: `ego_recent` holds the ego's last states oldest first (back() is now),
/// `scene` the current state of every agent (index-aligned with the scenario).
FeatureVector extract_features(const FeatureContext& ctx, std::size_t agent,
                               std::span<const AgentState> ego_recent,
                               std::span<const AgentState> scene);

/// Convenience form over full per-agent trajectories up to time index t.
/// Throws std::invalid_argument for an unknown agent id or an empty history.
FeatureVector extract_features(const FeatureContext& ctx, int agent_id,
                               const std::vector<Trajectory>& history, std::size_t t);

}  // namespace grbo
