#include "grbo/features.hpp"

#include <algorithm>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace grbo {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kAccelScale = 4.0;
constexpr double kYawScale = 0.5;
constexpr double kDistScale = 50.0;
constexpr double kNeighborScale = 30.0;
constexpr double kLaneHalfWidth = 1.75;
constexpr double kLeaderLateral = 2.2;
constexpr double kLeaderRange = 50.0;
constexpr double kConflictLookahead = 50.0;
constexpr double kConflictStep = 2.0;
constexpr double kConflictRadius = 2.5;
constexpr double kConflictMinAngle = 0.5;  // rad; flatter encounters are following, not crossing

struct EgoFrame {
  Vec2 origin;
  double heading;
  Vec2 to_local(const Vec2& p) const {
    const Vec2 d = p - origin;
    const double c = std::cos(heading), s = std::sin(heading);
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
  }
};

// Closest approach of two constant-velocity points within [0, horizon].
std::pair<double, double> closest_approach(const Vec2& dp, const Vec2& dv, double horizon) {
  const double vv = dv.squaredNorm();
  double t = vv > 1e-12 ? -dp.dot(dv) / vv : 0.0;
  t = std::clamp(t, 0.0, horizon);
  return {(dp + t * dv).norm(), t};
}

// Where the neighbour's straight-line path first comes within kConflictRadius of the ego route
// ahead: (ego arc distance, neighbour distance along its heading), or nothing.
std::optional<std::pair<double, double>> path_conflict(const std::vector<Vec2>& ego_path,
                                                       double step, const AgentState& other) {
  const Vec2 origin = other.position();
  const Vec2 dir = other.forward();
  for (std::size_t i = 0; i < ego_path.size(); ++i) {
    const double u = std::clamp((ego_path[i] - origin).dot(dir), 0.0, kConflictLookahead);
    if ((origin + u * dir - ego_path[i]).norm() < kConflictRadius)
      return std::make_pair(static_cast<double>(i) * step, u);
  }
  return std::nullopt;
}

}  // namespace

FeatureContext::FeatureContext(const Scenario& sc, const SimConfig& sim_cfg, FeatureConfig fc)
    : scenario(&sc), sim(sim_cfg), cfg(fc), geometry(sc) {}

FeatureVector extract_features(const FeatureContext& ctx, std::size_t agent,
                               std::span<const AgentState> ego_recent,
                               std::span<const AgentState> scene) {
  if (ego_recent.empty()) throw std::invalid_argument("extract_features: empty history");
  if (agent >= scene.size()) throw std::invalid_argument("extract_features: unknown agent");
  const FeatureConfig& fc = ctx.cfg;
  FeatureVector f = FeatureVector::Zero(fc.dim());
  const AgentState& me = ego_recent.back();
  const EgoFrame frame{me.position(), me.heading};
  const RoutePath& route = ctx.geometry.routes[agent];
  int k = 0;

  f[k++] = me.speed / ctx.sim.v_max;
  for (int h = 0; h < fc.command_history; ++h) {
    const auto idx = static_cast<std::ptrdiff_t>(ego_recent.size()) - 1 - h;
    if (idx >= 1) {
      const AgentState& a = ego_recent[static_cast<std::size_t>(idx - 1)];
      const AgentState& b = ego_recent[static_cast<std::size_t>(idx)];
      f[k] = (b.speed - a.speed) / ctx.sim.dt / kAccelScale;
      f[k + 1] = normalize_angle(b.heading - a.heading) / ctx.sim.dt / kYawScale;
    }
    k += 2;
  }

  const Goal& goal = ctx.scenario->goals[agent];
  const Vec2 goal_local = frame.to_local(goal.point);
  const Projection here = route.project(me.position());
  f[k++] = goal_local.norm() / kDistScale;
  f[k++] = goal_local.norm() > 1e-9 ? std::atan2(goal_local.y(), goal_local.x()) / kPi : 0.0;
  f[k++] = normalize_angle(goal.heading - me.heading) / kPi;
  f[k++] = std::clamp((ctx.geometry.goal_arc[agent] - here.arc_length) / 100.0, -2.0, 2.0);

  f[k++] = std::clamp(here.lateral / kLaneHalfWidth, -5.0, 5.0);
  f[k++] = normalize_angle(me.heading - here.heading) / kPi;
  const std::array<double, 3> ahead = {5.0, 10.0, 20.0};
  for (double ds : ahead) {
    const Vec2 p = frame.to_local(route.point_at(here.arc_length + ds));
    f[k++] = p.x() / 20.0;
    f[k++] = p.y() / 20.0;
    f[k++] = normalize_angle(route.heading_at(here.arc_length + ds) - me.heading) / kPi;
  }
  for (double ds : ahead) f[k++] = 10.0 * route.curvature_at(here.arc_length + ds);
  f[k++] = ctx.geometry.goal_arc[agent] > 0.0
               ? std::clamp(here.arc_length / ctx.geometry.goal_arc[agent], 0.0, 1.0)
               : 1.0;
  f[k++] = me.length / 5.0;
  f[k++] = me.width / 2.0;

  // Nearest neighbours by distance, ties by index.
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t j = 0; j < scene.size(); ++j) {
    if (j == agent) continue;
    const double d = (scene[j].position() - me.position()).norm();
    if (d <= fc.neighbor_radius) near.emplace_back(d, j);
  }
  std::sort(near.begin(), near.end());
  std::vector<Vec2> ego_path;
  if (!near.empty())
    for (double ds = 0.0; ds <= kConflictLookahead; ds += kConflictStep)
      ego_path.push_back(route.point_at(here.arc_length + ds));
  const double my_eta_speed = std::max(me.speed, 0.5);
  for (int n = 0; n < fc.max_neighbors; ++n) {
    if (static_cast<std::size_t>(n) < near.size()) {
      const AgentState& o = scene[near[static_cast<std::size_t>(n)].second];
      const Vec2 rel = frame.to_local(o.position());
      const double dh = normalize_angle(o.heading - me.heading);
      const auto [cpa, t_cpa] = closest_approach(o.position() - me.position(),
                                                 o.velocity() - me.velocity(), fc.cpa_horizon);
      f[k] = 1.0;
      f[k + 1] = rel.x() / kNeighborScale;
      f[k + 2] = rel.y() / kNeighborScale;
      f[k + 3] = std::cos(dh);
      f[k + 4] = std::sin(dh);
      f[k + 5] = o.speed / ctx.sim.v_max;
      f[k + 6] = std::min(cpa, 20.0) / 20.0;
      f[k + 7] = t_cpa / fc.cpa_horizon;
      if (std::abs(dh) > kConflictMinAngle) {
        if (const auto c = path_conflict(ego_path, kConflictStep, o)) {
          const double my_eta = std::min(c->first / my_eta_speed, 10.0);
          const double their_eta = std::min(c->second / std::max(o.speed, 0.5), 10.0);
          f[k + 8] = 1.0;
          f[k + 9] = c->first / kConflictLookahead;
          f[k + 10] = std::clamp((my_eta - their_eta) / 4.0, -1.0, 1.0);
          f[k + 11] = their_eta / 5.0;
        }
      }
    }
    k += 12;
  }

  // Closest agent inside the ego's route corridor ahead.
  double best_gap = kLeaderRange;
  std::size_t leader = scene.size();
  double leader_speed = 0.0;
  for (std::size_t j = 0; j < scene.size(); ++j) {
    if (j == agent) continue;
    const Projection p = route.project(scene[j].position());
    const double ahead_s = p.arc_length - here.arc_length;
    if (std::abs(p.lateral) >= kLeaderLateral || ahead_s <= 0.0) continue;
    const double gap = ahead_s - 0.5 * (me.length + scene[j].length);
    if (gap < best_gap) {
      best_gap = gap;
      leader = j;
      leader_speed = scene[j].speed * std::cos(scene[j].heading - p.heading);
    }
  }
  if (leader < scene.size()) {
    f[k] = 1.0;
    f[k + 1] = best_gap / kLeaderRange;
    f[k + 2] = leader_speed / ctx.sim.v_max;
    f[k + 3] = (me.speed - leader_speed) / ctx.sim.v_max;
    f[k + 4] = std::clamp((me.speed - leader_speed) / std::max(best_gap, 1.0), -1.0, 2.0);
  }
  return f;
}

FeatureVector extract_features(const FeatureContext& ctx, int agent_id,
                               const std::vector<Trajectory>& history, std::size_t t) {
  const std::size_t agent = ctx.scenario->index_of(agent_id);
  if (history.size() != ctx.scenario->num_agents())
    throw std::invalid_argument("extract_features: history agent count mismatch");
  const Trajectory& mine = history[agent];
  if (mine.empty() || t >= mine.size())
    throw std::invalid_argument("extract_features: history does not reach t");
  const std::size_t window = static_cast<std::size_t>(ctx.cfg.command_history) + 1;
  const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
  const std::span<const AgentState> recent(mine.data() + first, t + 1 - first);
  const std::vector<AgentState> scene = states_at(history, t);
  return extract_features(ctx, agent, recent, scene);
}

}  // namespace grbo
