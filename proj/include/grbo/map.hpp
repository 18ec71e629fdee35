#pragma once

#include "grbo/scene.hpp"

#include <map>
#include <vector>

namespace grbo {

struct Lane {
  int id = 0;
  std::vector<Vec2> centerline;  // >= 2 points, strictly positive segment lengths
  double width = 3.5;
  std::vector<int> successors;
};

struct MapContext {
  std::vector<Lane> lanes;
  std::map<int, std::vector<int>> routes;  // agent_id -> ordered lane ids

  const Lane& lane(int id) const;
  bool has_lane(int id) const;
};

/// Throws std::invalid_argument on a degenerate polyline, dangling successor, or disconnected route.
void validate(const MapContext& map);

struct Projection {
  double arc_length = 0.0;  // along the path, may extend past either end
  double lateral = 0.0;     // signed, left of travel direction is positive
  Vec2 point = Vec2::Zero();
  double heading = 0.0;     // path tangent at the projected point
};

/// Arc-length parametrized polyline built by concatenating the centerlines of a lane sequence.
class RoutePath {
 public:
  RoutePath() = default;
  explicit RoutePath(std::vector<Vec2> points);
  RoutePath(const MapContext& map, const std::vector<int>& lane_ids);

  double length() const { return arc_.empty() ? 0.0 : arc_.back(); }
  const std::vector<Vec2>& points() const { return points_; }
  bool empty() const { return points_.size() < 2; }

  Projection project(const Vec2& p) const;
  /// Point on the path; linearly extrapolated before the start and past the end.
  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  /// Signed curvature from the tangent change over a +-window metre stencil.
  double curvature_at(double s, double window = 2.0) const;

 private:
  std::size_t segment_at(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> arc_;
};

struct RouteProgress {
  double fraction = 0.0;
  bool off_route = false;
};

inline constexpr double kOffRouteDistance = 20.0;

/// Projected arc-length over the goal's arc-length, clamped to [0, 1]. Beyond kOffRouteDistance
/// laterally the caller's last valid fraction is returned and the result is flagged off-route.
RouteProgress route_progress(const AgentState& state, const RoutePath& route, const Vec2& goal,
                             double last_valid_fraction = 0.0);

}  // namespace grbo
