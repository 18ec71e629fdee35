#pragma once

#include "grbo/map.hpp"
#include "grbo/scene.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grbo {

enum class ScenarioFamily { straight, unprotected_right_turn, crossing, merge };

std::string_view to_string(ScenarioFamily family);
/// Throws std::invalid_argument for an unknown name.
ScenarioFamily family_from_string(std::string_view name);

struct Goal {
  Vec2 point = Vec2::Zero();
  double heading = 0.0;
};

using Trajectory = std::vector<AgentState>;

/// One traffic scene. Agents are addressed by index; agent_id lives in the states and keys the
/// map routes.
struct Scenario {
  std::string scenario_id;
  std::uint64_t rng_seed = 0;
  ScenarioFamily family = ScenarioFamily::straight;
  double dt = 0.1;
  int horizon = 80;
  MapContext map;
  std::vector<Trajectory> initial_history;  // [agent][H_hist], back() is t = 0
  std::vector<Goal> goals;                  // [agent]
  std::optional<std::vector<Trajectory>> demo;  // [agent][T + 1], front() is t = 0
  std::vector<int> inattentive_agents;      // agent ids driven by the low-gain demonstrator

  std::size_t num_agents() const { return initial_history.size(); }
  int agent_id(std::size_t index) const { return initial_history.at(index).back().agent_id; }
  std::size_t index_of(int agent_id) const;
  const AgentState& initial_state(std::size_t index) const { return initial_history[index].back(); }
  bool has_inattentive() const { return !inattentive_agents.empty(); }
};

/// Throws std::invalid_argument when any Scenario invariant fails.
void validate(const Scenario& scenario, const SimConfig& cfg);

/// Route polylines and goal arc-lengths precomputed once per scenario.
struct ScenarioGeometry {
  std::vector<RoutePath> routes;  // [agent]
  std::vector<double> goal_arc;   // [agent]
  std::vector<double> start_arc;  // [agent], arc length of the initial position

  /// Fraction of the start-to-goal arc covered, clamped to [0, 1]. Off-route states return
  /// `last_valid`.
  explicit ScenarioGeometry(const Scenario& scenario);
  double progress(std::size_t agent, const AgentState& state, double last_valid = 0.0) const;
};

struct GeneratorConfig {
  double inattentive_fraction = 0.15;
  int min_agents = 2;
  int max_agents = 8;
};

/// Deterministic per seed. Demonstrations are produced by the scripted demonstrator.
/// Throws std::invalid_argument when count < 1.
std::vector<Scenario> generate_scenarios(ScenarioFamily family, int count, std::uint64_t seed,
                                         const SimConfig& sim = {},
                                         const GeneratorConfig& gen = {});

/// Mixed corpus: fractions per family applied to `count`, deterministic per seed, interleaved in a
/// seed-determined order.
struct FamilyMix {
  ScenarioFamily family;
  double weight;
};
std::vector<Scenario> generate_corpus(const std::vector<FamilyMix>& mix, int count,
                                      std::uint64_t seed, const SimConfig& sim = {},
                                      const GeneratorConfig& gen = {});

/// Minimum centre-to-centre gap between any two agents over the demonstration.
double min_demo_gap(const Scenario& scenario);

/// Scene state of every agent at time t of a trajectory set.
std::vector<AgentState> states_at(const std::vector<Trajectory>& trajectories, std::size_t t);

}  // namespace grbo
