#include "grbo/map.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace grbo {

const Lane& MapContext::lane(int id) const {
  for (const Lane& l : lanes)
    if (l.id == id) return l;
  throw std::invalid_argument("MapContext: unknown lane id " + std::to_string(id));
}

bool MapContext::has_lane(int id) const {
  return std::any_of(lanes.begin(), lanes.end(), [id](const Lane& l) { return l.id == id; });
}

void validate(const MapContext& map) {
  for (const Lane& l : map.lanes) {
    if (l.centerline.size() < 2)
      throw std::invalid_argument("lane " + std::to_string(l.id) + ": fewer than 2 points");
    for (std::size_t k = 1; k < l.centerline.size(); ++k)
      if (!((l.centerline[k] - l.centerline[k - 1]).norm() > 0.0))
        throw std::invalid_argument("lane " + std::to_string(l.id) + ": zero-length segment");
    if (!(l.width > 0.0)) throw std::invalid_argument("lane width must be > 0");
    for (int succ : l.successors)
      if (!map.has_lane(succ))
        throw std::invalid_argument("lane " + std::to_string(l.id) + ": dangling successor");
  }
  for (const auto& [agent, route] : map.routes) {
    if (route.empty())
      throw std::invalid_argument("route of agent " + std::to_string(agent) + " is empty");
    for (std::size_t k = 0; k < route.size(); ++k) {
      const Lane& l = map.lane(route[k]);
      if (k + 1 < route.size() &&
          std::find(l.successors.begin(), l.successors.end(), route[k + 1]) == l.successors.end())
        throw std::invalid_argument("route of agent " + std::to_string(agent) +
                                    " is not connected");
    }
  }
}

RoutePath::RoutePath(std::vector<Vec2> points) : points_(std::move(points)) {
  arc_.reserve(points_.size());
  double s = 0.0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (k > 0) s += (points_[k] - points_[k - 1]).norm();
    arc_.push_back(s);
  }
}

RoutePath::RoutePath(const MapContext& map, const std::vector<int>& lane_ids) {
  std::vector<Vec2> pts;
  for (int id : lane_ids) {
    for (const Vec2& p : map.lane(id).centerline) {
      if (!pts.empty() && (p - pts.back()).norm() < 1e-9) continue;
      pts.push_back(p);
    }
  }
  *this = RoutePath(std::move(pts));
}

std::size_t RoutePath::segment_at(double s) const {
  const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
  const auto idx = static_cast<std::size_t>(std::distance(arc_.begin(), it));
  return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, points_.size() - 2);
}

Projection RoutePath::project(const Vec2& p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  const std::size_t n_seg = points_.size() - 1;
  for (std::size_t k = 0; k < n_seg; ++k) {
    const Vec2 a = points_[k];
    const Vec2 d = points_[k + 1] - a;
    const double len = arc_[k + 1] - arc_[k];
    double u = (p - a).dot(d) / (len * len);
    const double lo = (k == 0) ? -std::numeric_limits<double>::infinity() : 0.0;
    const double hi = (k + 1 == n_seg) ? std::numeric_limits<double>::infinity() : 1.0;
    u = std::clamp(u, lo, hi);
    const Vec2 q = a + u * d;
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      const Vec2 t = d / len;
      best.point = q;
      best.arc_length = arc_[k] + u * len;
      best.heading = std::atan2(t.y(), t.x());
      const Vec2 r = p - q;
      best.lateral = t.x() * r.y() - t.y() * r.x();
    }
  }
  return best;
}

Vec2 RoutePath::point_at(double s) const {
  const std::size_t k = segment_at(s);
  const double len = arc_[k + 1] - arc_[k];
  const double u = (s - arc_[k]) / len;
  return points_[k] + u * (points_[k + 1] - points_[k]);
}

double RoutePath::heading_at(double s) const {
  const std::size_t k = segment_at(s);
  const Vec2 d = points_[k + 1] - points_[k];
  return std::atan2(d.y(), d.x());
}

double RoutePath::curvature_at(double s, double window) const {
  const double dh = normalize_angle(heading_at(s + window) - heading_at(s - window));
  return dh / (2.0 * window);
}

RouteProgress route_progress(const AgentState& state, const RoutePath& route, const Vec2& goal,
                             double last_valid_fraction) {
  if (route.empty()) throw std::invalid_argument("route_progress: empty route");
  const Projection here = route.project(state.position());
  if (std::abs(here.lateral) > kOffRouteDistance) return {last_valid_fraction, true};
  const double goal_s = route.project(goal).arc_length;
  if (!(goal_s > 0.0)) return {1.0, false};
  return {std::clamp(here.arc_length / goal_s, 0.0, 1.0), false};
}

}  // namespace grbo
