#pragma once

#include "grbo/policy.hpp"
#include "grbo/rng.hpp"
#include "grbo/scenario.hpp"

#include <vector>

namespace fixture {

using namespace grbo;

/// Agents on one straight eastbound lane of `length` metres. Agent k starts at x = starts[k] with
/// speed speeds[k]; every goal is the lane end.
inline Scenario straight_road(const std::vector<double>& starts, const std::vector<double>& speeds,
                              double length = 100.0, const SimConfig& sim = {}) {
  Scenario s;
  s.scenario_id = "fixture-straight";
  s.family = ScenarioFamily::straight;
  s.dt = sim.dt;
  s.horizon = sim.horizon;
  s.map.lanes.push_back(Lane{1, {Vec2(0.0, 0.0), Vec2(length, 0.0)}, 3.5, {}});
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    s.map.routes[id] = {1};
    Trajectory h;
    for (int t = sim.history_steps - 1; t >= 0; --t) {
      AgentState a;
      a.x = starts[k] - speeds[k] * sim.dt * t;
      a.speed = speeds[k];
      a.agent_id = id;
      h.push_back(a);
    }
    s.initial_history.push_back(h);
    s.goals.push_back(Goal{Vec2(length, 0.0), 0.0});
  }
  return s;
}

inline PolicyModel random_model(std::uint64_t seed, int hidden = 16, const TokenVocabulary& vocab = {},
                                double gain = 1.0) {
  Rng rng(seed);
  return PolicyModel::random(vocab, FeatureConfig{}, hidden, rng, gain);
}

/// 2 x 2 grid: accel {0, 1}, yaw rate {-0.2, 0}.
inline TokenVocabulary four_tokens() { return TokenVocabulary({0.0, 1.0}, {-0.2, 0.0}); }

inline Eigen::VectorXd random_features(Rng& rng, int dim = FeatureConfig{}.dim()) {
  Eigen::VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x[i] = uniform(rng, -1.0, 1.0);
  return x;
}

}  // namespace fixture
