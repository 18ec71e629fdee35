#include "grbo/demonstrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace grbo {

namespace {

constexpr double kConflictRadius = 2.5;   // m between route centerlines
constexpr double kZoneClearance = 6.0;    // m past the other agent's entry before it counts as gone
constexpr double kLeaderLateral = 2.2;    // m from my route centerline
constexpr double kLeaderRange = 80.0;     // m ahead along my route
constexpr double kConflictHorizon = 7.0;  // s, ignore conflicts further out in time
constexpr double kCurveLookahead = 25.0;  // m scanned ahead for curve speed limits

std::vector<ConflictZone> find_conflicts(const std::vector<RoutePath>& routes, std::size_t i) {
  std::vector<ConflictZone> zones;
  const RoutePath& mine = routes[i];
  for (std::size_t k = 0; k < routes.size(); ++k) {
    if (k == i) continue;
    const RoutePath& theirs = routes[k];
    for (double s = 0.0; s <= mine.length(); s += 0.5) {
      const Projection p = theirs.project(mine.point_at(s));
      if (p.arc_length < 0.0 || p.arc_length > theirs.length()) continue;
      if (std::abs(p.lateral) < kConflictRadius) {
        // Routes that coincide from the start are handled by car following.
        if (s > 1.0 && p.arc_length > 1.0) zones.push_back({k, s, p.arc_length});
        break;
      }
    }
  }
  return zones;
}

// IDM interaction term (<= 0) for a leader at `gap` metres moving at `lead_speed`.
double idm_interaction(double v, double lead_speed, double gap, const DemonstratorParams& p) {
  const double dv = v - lead_speed;
  const double s_star =
      p.min_gap + std::max(0.0, v * p.time_headway + v * dv / (2.0 * std::sqrt(p.max_accel *
                                                                                p.comfort_decel)));
  const double g = std::max(gap, 0.1);
  return -p.max_accel * (s_star / g) * (s_star / g);
}

}  // namespace

Demonstrator::Demonstrator(const Scenario& scenario, DemonstratorParams params)
    : scenario_(&scenario), params_(params), geometry_(scenario) {
  const std::size_t n = scenario.num_agents();
  for (std::size_t i = 0; i < n; ++i) {
    const double v0 = scenario.initial_state(i).speed;
    cruise_speed_.push_back(v0 > 1.0 ? v0 : params_.desired_speed);
    conflicts_.push_back(find_conflicts(geometry_.routes, i));
  }
}

double Demonstrator::reaction_gain(std::size_t agent) const {
  const int id = scenario_->agent_id(agent);
  const auto& ids = scenario_->inattentive_agents;
  return std::find(ids.begin(), ids.end(), id) != ids.end() ? params_.inattentive_gain
                                                            : params_.reaction_gain;
}

ControlCommand Demonstrator::command(std::size_t agent, const std::vector<AgentState>& scene) const {
  return command(agent, scene, reaction_gain(agent));
}

ControlCommand Demonstrator::command(std::size_t i, const std::vector<AgentState>& scene,
                                     double gain) const {
  const AgentState& me = scene[i];
  const RoutePath& route = geometry_.routes[i];
  const Projection here = route.project(me.position());
  const double v = me.speed;

  // Lateral: pure pursuit on the route.
  const double lookahead = std::max(params_.lookahead, params_.lookahead_time * v);
  const Vec2 target = route.point_at(here.arc_length + lookahead);
  const Vec2 rel = target - me.position();
  const double alpha = normalize_angle(std::atan2(rel.y(), rel.x()) - me.heading);
  const double curvature = 2.0 * std::sin(alpha) / lookahead;
  const double yaw_rate =
      std::clamp(v * curvature, -params_.max_yaw_rate, params_.max_yaw_rate);

  // Longitudinal: IDM free-road term against a curvature-limited cruise speed.
  double cruise = cruise_speed_[i];
  for (double ds = 0.0; ds <= kCurveLookahead; ds += 5.0) {
    const double kappa = std::abs(route.curvature_at(here.arc_length + ds));
    if (kappa > 1e-6) cruise = std::min(cruise, 0.9 * params_.max_yaw_rate / kappa);
  }
  cruise = std::max(cruise, 1.0);
  const double free_term = params_.max_accel * (1.0 - std::pow(v / cruise, 4));

  double interaction = 0.0;
  const double front = here.arc_length + 0.5 * me.length;
  for (std::size_t k = 0; k < scene.size(); ++k) {
    if (k == i) continue;
    const AgentState& other = scene[k];
    const Projection p = route.project(other.position());
    const double ahead = p.arc_length - here.arc_length;
    if (std::abs(p.lateral) < kLeaderLateral && ahead > 0.0 && ahead < kLeaderRange) {
      const double gap = ahead - 0.5 * (me.length + other.length);
      const double lead_speed = other.speed * std::cos(other.heading - p.heading);
      interaction = std::min(interaction, idm_interaction(v, lead_speed, gap, params_));
    }
  }

  for (const ConflictZone& z : conflicts_[i]) {
    if (front > z.entry) continue;  // committed
    const AgentState& other = scene[z.other];
    const double other_s = geometry_.routes[z.other].project(other.position()).arc_length;
    if (other_s - 0.5 * other.length > z.other_entry + kZoneClearance) continue;  // cleared
    const double my_dist = z.entry - front;
    const double other_dist = z.other_entry - (other_s + 0.5 * other.length);
    bool yield = other_dist <= 0.0;
    if (!yield) {
      const double my_eta = my_dist / std::max(v, 1.0);
      const double other_eta = other_dist / std::max(other.speed, 1.0);
      if (my_eta > kConflictHorizon || other_eta > kConflictHorizon) continue;
      yield = other_eta < my_eta || (other_eta == my_eta && z.other < i);
    }
    if (yield)
      interaction = std::min(interaction, idm_interaction(v, 0.0, my_dist - 1.0, params_));
  }

  const double accel =
      std::clamp(free_term + gain * interaction, -params_.max_decel, params_.max_accel);
  return {accel, yaw_rate};
}

std::vector<Trajectory> run_demonstrator(const Scenario& scenario, const SimConfig& cfg,
                                         const DemonstratorParams& params, Rng& rng) {
  const Demonstrator driver(scenario, params);
  const std::size_t n = scenario.num_agents();
  std::vector<Trajectory> traj(n);
  std::vector<AgentState> scene;
  for (std::size_t i = 0; i < n; ++i) {
    scene.push_back(scenario.initial_state(i));
    traj[i].reserve(static_cast<std::size_t>(cfg.horizon) + 1);
    traj[i].push_back(scene.back());
  }
  for (int t = 0; t < cfg.horizon; ++t) {
    std::vector<AgentState> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      ControlCommand c = driver.command(i, scene);
      c.accel += params.accel_noise_std * standard_normal(rng);
      c.yaw_rate += params.yaw_noise_std * standard_normal(rng);
      next[i] = transition(scene[i], c, cfg);
    }
    scene = std::move(next);
    for (std::size_t i = 0; i < n; ++i) traj[i].push_back(scene[i]);
  }
  return traj;
}

}  // namespace grbo
