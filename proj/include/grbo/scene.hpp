#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <numbers>

namespace grbo {

using Vec2 = Eigen::Vector2d;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar angle) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  constexpr Scalar kTwoPi = 2 * std::numbers::pi_v<Scalar>;
  if (angle > -kPi && angle <= kPi) return angle;
  Scalar wrapped = std::fmod(angle + kPi, kTwoPi);
  if (wrapped <= 0) wrapped += kTwoPi;
  return wrapped - kPi;
}

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians in (-pi, pi]
  double speed = 0.0;    // m/s
  double length = 4.5;
  double width = 2.0;
  int agent_id = 0;

  Vec2 position() const { return {x, y}; }
  Vec2 forward() const { return {std::cos(heading), std::sin(heading)}; }
  Vec2 velocity() const { return speed * forward(); }

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct ControlCommand {
  double accel = 0.0;     // m/s^2
  double yaw_rate = 0.0;  // rad/s

  friend bool operator==(const ControlCommand&, const ControlCommand&) = default;
};

struct SimConfig {
  double dt = 0.1;
  int horizon = 80;        // T, control steps per episode
  double v_max = 15.0;
  int history_steps = 10;  // H_hist
  // Signed-speed variant (speed floor -v_max instead of 0). Off by default.
  bool allow_reverse = false;

  double speed_floor() const { return allow_reverse ? -v_max : 0.0; }
};

/// Throws std::invalid_argument when dt <= 0, horizon < 1, v_max <= 0 or history_steps < 1.
void validate(const SimConfig& cfg);

/// True when the state satisfies the AgentState invariants under cfg.
bool is_valid(const AgentState& state, const SimConfig& cfg);

/// Unicycle step: speed first (clamped), then heading, then position with the new speed and heading.
AgentState transition(const AgentState& state, const ControlCommand& command, const SimConfig& cfg);

/// Corners of the oriented footprint, counter-clockwise starting front-left.
std::array<Vec2, 4> footprint(const AgentState& state);

/// Oriented-rectangle overlap by separating axes (two face normals per box).
bool check_collision(const AgentState& a, const AgentState& b);

/// Smallest separation along any of the four candidate axes; negative means penetration depth.
double separation_margin(const AgentState& a, const AgentState& b);

}  // namespace grbo
