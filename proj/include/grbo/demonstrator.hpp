#pragma once

#include "grbo/rng.hpp"
#include "grbo/scenario.hpp"

#include <vector>

namespace grbo {

/// Scripted "human" driver: pure-pursuit steering plus IDM longitudinal control against route
/// leaders and right-of-way conflicts.
struct DemonstratorParams {
  double lookahead = 6.0;         // m, minimum pure-pursuit lookahead
  double lookahead_time = 0.6;    // s, speed-proportional lookahead term
  double desired_speed = 10.0;    // m/s, used when an agent starts below 1 m/s
  double time_headway = 1.2;      // s
  double min_gap = 2.5;           // m, IDM jam distance
  double max_accel = 2.0;         // m/s^2
  double comfort_decel = 2.5;     // m/s^2
  double max_decel = 4.0;         // m/s^2
  double max_yaw_rate = 0.5;      // rad/s
  double accel_noise_std = 0.25;
  double yaw_noise_std = 0.015;
  double reaction_gain = 1.0;     // multiplier on interaction braking
  double inattentive_gain = 0.4;  // reaction gain for agents listed as inattentive
};

/// Where two routes first come within a lane width of each other.
struct ConflictZone {
  std::size_t other = 0;
  double entry = 0.0;        // arc-length on this agent's route
  double other_entry = 0.0;  // arc-length on the other agent's route
};

class Demonstrator {
 public:
  Demonstrator(const Scenario& scenario, DemonstratorParams params);

  /// Command for one agent given the current states of every agent in the scene.
  ControlCommand command(std::size_t agent, const std::vector<AgentState>& scene) const;
  /// Same with an explicit reaction gain instead of the scenario's attentiveness flag.
  ControlCommand command(std::size_t agent, const std::vector<AgentState>& scene,
                         double reaction_gain) const;

  double reaction_gain(std::size_t agent) const;
  const ScenarioGeometry& geometry() const { return geometry_; }
  const std::vector<ConflictZone>& conflicts(std::size_t agent) const { return conflicts_[agent]; }

 private:
  const Scenario* scenario_;
  DemonstratorParams params_;
  ScenarioGeometry geometry_;
  std::vector<double> cruise_speed_;
  std::vector<std::vector<ConflictZone>> conflicts_;
};

/// Rolls every agent forward T steps from the scenario's initial condition with Gaussian command
/// noise. Deterministic per rng state; returns [agent][T + 1] with front() the initial state.
std::vector<Trajectory> run_demonstrator(const Scenario& scenario, const SimConfig& cfg,
                                         const DemonstratorParams& params, Rng& rng);

}  // namespace grbo
