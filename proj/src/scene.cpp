#include "grbo/scene.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <stdexcept>

namespace grbo {

void validate(const SimConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be > 0");
  if (cfg.horizon < 1) throw std::invalid_argument("SimConfig: horizon must be >= 1");
  if (!(cfg.v_max > 0.0)) throw std::invalid_argument("SimConfig: v_max must be > 0");
  if (cfg.history_steps < 1) throw std::invalid_argument("SimConfig: history_steps must be >= 1");
}

bool is_valid(const AgentState& s, const SimConfig& cfg) {
  const bool finite = std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.heading) &&
                      std::isfinite(s.speed);
  return finite && s.speed >= cfg.speed_floor() && s.speed <= cfg.v_max &&
         s.heading > -std::numbers::pi && s.heading <= std::numbers::pi && s.length > 0.0 &&
         s.width > 0.0;
}

AgentState transition(const AgentState& state, const ControlCommand& command,
                      const SimConfig& cfg) {
  AgentState next = state;
  next.speed = std::clamp(state.speed + command.accel * cfg.dt, cfg.speed_floor(), cfg.v_max);
  next.heading = normalize_angle(state.heading + command.yaw_rate * cfg.dt);
  next.x = state.x + next.speed * std::cos(next.heading) * cfg.dt;
  next.y = state.y + next.speed * std::sin(next.heading) * cfg.dt;
  return next;
}

std::array<Vec2, 4> footprint(const AgentState& s) {
  const Vec2 c = s.position();
  const Vec2 f = s.forward() * (0.5 * s.length);
  const Vec2 l = Vec2(-std::sin(s.heading), std::cos(s.heading)) * (0.5 * s.width);
  return {c + f + l, c - f + l, c - f - l, c + f - l};
}

namespace {

// Gap between the projections of both boxes onto a unit axis; negative when they overlap.
double axis_gap(const AgentState& a, const AgentState& b, const Vec2& axis) {
  const auto project_radius = [&axis](const AgentState& s) {
    const Vec2 f = s.forward();
    const Vec2 l(-f.y(), f.x());
    return 0.5 * s.length * std::abs(f.dot(axis)) + 0.5 * s.width * std::abs(l.dot(axis));
  };
  const double center_distance = std::abs((b.position() - a.position()).dot(axis));
  return center_distance - project_radius(a) - project_radius(b);
}

}  // namespace

double separation_margin(const AgentState& a, const AgentState& b) {
  const Vec2 fa = a.forward();
  const Vec2 fb = b.forward();
  const std::array<Vec2, 4> axes = {fa, Vec2(-fa.y(), fa.x()), fb, Vec2(-fb.y(), fb.x())};
  double margin = -std::numeric_limits<double>::infinity();
  for (const Vec2& axis : axes) margin = std::max(margin, axis_gap(a, b, axis));
  return margin;
}

bool check_collision(const AgentState& a, const AgentState& b) {
  // Cheap bounding-circle reject before the axis tests.
  const double reach = 0.5 * (std::hypot(a.length, a.width) + std::hypot(b.length, b.width));
  if ((a.position() - b.position()).squaredNorm() > reach * reach) return false;
  return separation_margin(a, b) < 0.0;
}

}  // namespace grbo
