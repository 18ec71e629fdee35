#include "grbo/scenario.hpp"

#include "grbo/demonstrator.hpp"
#include "grbo/rng.hpp"
#include "grbo/scenario_io.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace grbo {

std::string_view to_string(ScenarioFamily family) {
  switch (family) {
    case ScenarioFamily::straight: return "straight";
    case ScenarioFamily::unprotected_right_turn: return "unprotected_right_turn";
    case ScenarioFamily::crossing: return "crossing";
    case ScenarioFamily::merge: return "merge";
  }
  return "straight";
}

ScenarioFamily family_from_string(std::string_view name) {
  for (auto f : {ScenarioFamily::straight, ScenarioFamily::unprotected_right_turn,
                 ScenarioFamily::crossing, ScenarioFamily::merge})
    if (to_string(f) == name) return f;
  if (name == "right_turn") return ScenarioFamily::unprotected_right_turn;
  throw std::invalid_argument("unknown scenario family '" + std::string(name) + "'");
}

std::size_t Scenario::index_of(int id) const {
  for (std::size_t i = 0; i < initial_history.size(); ++i)
    if (agent_id(i) == id) return i;
  throw std::invalid_argument("scenario " + scenario_id + ": unknown agent id " +
                              std::to_string(id));
}

void validate(const Scenario& s, const SimConfig& cfg) {
  const auto fail = [&s](const std::string& what) {
    throw std::invalid_argument("scenario " + s.scenario_id + ": " + what);
  };
  if (std::abs(s.dt - cfg.dt) > 1e-12 || s.horizon != cfg.horizon)
    fail("dt/horizon inconsistent with SimConfig");
  validate(s.map);
  if (s.initial_history.empty()) fail("no agents");
  if (s.goals.size() != s.initial_history.size()) fail("every agent needs a goal");
  std::vector<int> ids;
  for (const Trajectory& h : s.initial_history) {
    if (h.empty()) fail("empty history");
    const int id = h.back().agent_id;
    for (const AgentState& st : h) {
      if (st.agent_id != id) fail("history mixes agent ids");
      if (!is_valid(st, cfg)) fail("invalid state in history of agent " + std::to_string(id));
    }
    if (!s.map.routes.contains(id)) fail("agent " + std::to_string(id) + " has no route");
    ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail("duplicate agent ids");
  if (s.demo) {
    if (s.demo->size() != s.initial_history.size()) fail("demo agent set differs");
    for (std::size_t i = 0; i < s.demo->size(); ++i) {
      const Trajectory& d = (*s.demo)[i];
      if (d.size() != static_cast<std::size_t>(cfg.horizon) + 1) fail("demo length != T + 1");
      for (const AgentState& st : d)
        if (st.agent_id != s.agent_id(i) || !is_valid(st, cfg)) fail("invalid demo state");
    }
  }
  for (int id : s.inattentive_agents) s.index_of(id);
}

ScenarioGeometry::ScenarioGeometry(const Scenario& scenario) {
  routes.reserve(scenario.num_agents());
  for (std::size_t i = 0; i < scenario.num_agents(); ++i) {
    routes.emplace_back(scenario.map, scenario.map.routes.at(scenario.agent_id(i)));
    goal_arc.push_back(routes.back().project(scenario.goals[i].point).arc_length);
    start_arc.push_back(routes.back().project(scenario.initial_state(i).position()).arc_length);
  }
}

double ScenarioGeometry::progress(std::size_t agent, const AgentState& state,
                                  double last_valid) const {
  const Projection p = routes[agent].project(state.position());
  if (std::abs(p.lateral) > kOffRouteDistance) return last_valid;
  const double span = goal_arc[agent] - start_arc[agent];
  if (!(span > 0.0)) return 1.0;
  return std::clamp((p.arc_length - start_arc[agent]) / span, 0.0, 1.0);
}

std::vector<AgentState> states_at(const std::vector<Trajectory>& trajectories, std::size_t t) {
  std::vector<AgentState> out;
  out.reserve(trajectories.size());
  for (const Trajectory& tr : trajectories) out.push_back(tr.at(t));
  return out;
}

double min_demo_gap(const Scenario& scenario) {
  if (!scenario.demo) throw std::invalid_argument("min_demo_gap: scenario has no demo");
  double gap = std::numeric_limits<double>::infinity();
  const auto& demo = *scenario.demo;
  for (std::size_t t = 0; t < demo.front().size(); ++t)
    for (std::size_t a = 0; a < demo.size(); ++a)
      for (std::size_t b = a + 1; b < demo.size(); ++b)
        gap = std::min(gap, separation_margin(demo[a][t], demo[b][t]));
  return gap;
}

namespace {

constexpr double kLaneWidth = 3.5;
constexpr double kHalfLane = 0.5 * kLaneWidth;
constexpr double kTurnRadius = 15.0;
constexpr double kBox = kTurnRadius + kHalfLane;  // half-size of the intersection box

Lane straight_lane(int id, Vec2 a, Vec2 b, std::vector<int> successors) {
  return Lane{id, {a, b}, kLaneWidth, std::move(successors)};
}

// Quarter arc from angle a0 to a1 (radians) about centre c, sampled about every metre.
Lane arc_lane(int id, Vec2 c, double r, double a0, double a1, std::vector<int> successors) {
  const int n = std::max(4, static_cast<int>(std::ceil(std::abs(a1 - a0) * r)));
  Lane lane{id, {}, kLaneWidth, std::move(successors)};
  for (int k = 0; k <= n; ++k) {
    const double a = a0 + (a1 - a0) * k / n;
    lane.centerline.emplace_back(c.x() + r * std::cos(a), c.y() + r * std::sin(a));
  }
  return lane;
}

// Lateral S-curve from (x0, y0) to (x1, y1) with zero end slopes.
Lane s_curve_lane(int id, Vec2 a, Vec2 b, double step, std::vector<int> successors) {
  Lane lane{id, {}, kLaneWidth, std::move(successors)};
  const int n = std::max(2, static_cast<int>(std::ceil((b.x() - a.x()) / step)));
  for (int k = 0; k <= n; ++k) {
    const double u = static_cast<double>(k) / n;
    const double blend = u * u * (3.0 - 2.0 * u);
    lane.centerline.emplace_back(a.x() + (b.x() - a.x()) * u, a.y() + (b.y() - a.y()) * blend);
  }
  return lane;
}

// Lane ids of the shared four-way intersection.
enum IntersectionLane : int {
  kNbIn = 1, kNbThrough, kNbRight, kNbOut, kEbIn, kEbThrough, kEbOut,
  kSbIn, kSbThrough, kSbOut, kWbIn, kWbThrough, kWbOut
};

MapContext intersection_map() {
  constexpr double kIn = 60.0;
  constexpr double kOut = 140.0;
  const double h = kBox;
  MapContext m;
  m.lanes = {
      straight_lane(kNbIn, {kHalfLane, -h - kIn}, {kHalfLane, -h}, {kNbThrough, kNbRight}),
      straight_lane(kNbThrough, {kHalfLane, -h}, {kHalfLane, h}, {kNbOut}),
      arc_lane(kNbRight, {h, -h}, kTurnRadius, std::numbers::pi, 0.5 * std::numbers::pi,
               {kEbOut}),
      straight_lane(kNbOut, {kHalfLane, h}, {kHalfLane, h + kOut}, {}),
      straight_lane(kEbIn, {-h - kIn, -kHalfLane}, {-h, -kHalfLane}, {kEbThrough}),
      straight_lane(kEbThrough, {-h, -kHalfLane}, {h, -kHalfLane}, {kEbOut}),
      straight_lane(kEbOut, {h, -kHalfLane}, {h + kOut, -kHalfLane}, {}),
      straight_lane(kSbIn, {-kHalfLane, h + kIn}, {-kHalfLane, h}, {kSbThrough}),
      straight_lane(kSbThrough, {-kHalfLane, h}, {-kHalfLane, -h}, {kSbOut}),
      straight_lane(kSbOut, {-kHalfLane, -h}, {-kHalfLane, -h - kOut}, {}),
      straight_lane(kWbIn, {h + kIn, kHalfLane}, {h, kHalfLane}, {kWbThrough}),
      straight_lane(kWbThrough, {h, kHalfLane}, {-h, kHalfLane}, {kWbOut}),
      straight_lane(kWbOut, {-h, kHalfLane}, {-h - kOut, kHalfLane}, {}),
  };
  return m;
}

MapContext straight_map() {
  MapContext m;
  m.lanes = {
      straight_lane(1, {-120.0, 0.0}, {0.0, 0.0}, {2, 3}),
      straight_lane(2, {0.0, 0.0}, {260.0, 0.0}, {}),
      s_curve_lane(3, {0.0, 0.0}, {40.0, kLaneWidth}, 2.0, {5}),
      straight_lane(4, {-120.0, kLaneWidth}, {40.0, kLaneWidth}, {5}),
      straight_lane(5, {40.0, kLaneWidth}, {260.0, kLaneWidth}, {}),
  };
  return m;
}

MapContext merge_map() {
  MapContext m;
  m.lanes = {
      straight_lane(1, {-150.0, 0.0}, {0.0, 0.0}, {3}),
      s_curve_lane(2, {-150.0, -20.0}, {0.0, 0.0}, 5.0, {3}),
      straight_lane(3, {0.0, 0.0}, {220.0, 0.0}, {}),
  };
  return m;
}

// A candidate traffic stream: lane sequence, reference point the arrival time is measured to, and
// the arrival-time and speed windows agents on it are drawn from.
struct Stream {
  std::vector<int> lanes;
  Vec2 reference;
  double t_lo, t_hi;
  double v_lo, v_hi;
};

struct FamilyLayout {
  MapContext map;
  Stream ego;
  std::vector<Stream> others;
};

FamilyLayout layout_for(ScenarioFamily family) {
  switch (family) {
    case ScenarioFamily::straight: {
      FamilyLayout f{straight_map(), {}, {}};
      const Vec2 ref(20.0, 0.0);
      f.ego = {{1, 3, 5}, ref, 1.0, 4.0, 8.0, 12.0};
      f.others = {{{1, 2}, ref, 0.0, 3.0, 3.0, 8.0},
                  {{1, 2}, ref, 1.0, 6.0, 8.0, 12.0},
                  {{4, 5}, ref, 0.5, 4.5, 5.0, 11.0},
                  {{1, 3, 5}, ref, 0.5, 5.0, 7.0, 12.0}};
      return f;
    }
    case ScenarioFamily::unprotected_right_turn: {
      FamilyLayout f{intersection_map(), {}, {}};
      const Vec2 merge_point(kBox, -kHalfLane);
      f.ego = {{kNbIn, kNbRight, kEbOut}, merge_point, 3.0, 6.0, 6.0, 9.0};
      f.others = {{{kEbIn, kEbThrough, kEbOut}, merge_point, 2.0, 6.5, 8.0, 12.0},
                  {{kEbIn, kEbThrough, kEbOut}, merge_point, 2.0, 6.5, 8.0, 12.0},
                  {{kNbIn, kNbThrough, kNbOut}, {kHalfLane, 0.0}, 3.0, 7.0, 7.0, 11.0},
                  {{kWbIn, kWbThrough, kWbOut}, {0.0, kHalfLane}, 2.0, 7.0, 7.0, 11.0}};
      return f;
    }
    case ScenarioFamily::crossing: {
      FamilyLayout f{intersection_map(), {}, {}};
      const Vec2 centre(0.0, 0.0);
      f.ego = {{kNbIn, kNbThrough, kNbOut}, centre, 2.5, 5.5, 7.0, 11.0};
      f.others = {{{kEbIn, kEbThrough, kEbOut}, centre, 2.0, 6.0, 7.0, 12.0},
                  {{kWbIn, kWbThrough, kWbOut}, centre, 2.0, 6.0, 7.0, 12.0},
                  {{kNbIn, kNbThrough, kNbOut}, centre, 3.0, 7.0, 7.0, 11.0},
                  {{kSbIn, kSbThrough, kSbOut}, centre, 2.0, 6.0, 7.0, 11.0}};
      return f;
    }
    case ScenarioFamily::merge: {
      FamilyLayout f{merge_map(), {}, {}};
      const Vec2 merge_point(0.0, 0.0);
      f.ego = {{2, 3}, merge_point, 3.0, 6.0, 7.0, 11.0};
      f.others = {{{1, 3}, merge_point, 2.0, 6.5, 8.0, 12.0},
                  {{1, 3}, merge_point, 2.0, 6.5, 8.0, 12.0},
                  {{2, 3}, merge_point, 4.0, 8.0, 7.0, 11.0}};
      return f;
    }
  }
  throw std::invalid_argument("unknown family");
}

bool overlaps_any(const AgentState& s, const std::vector<Trajectory>& placed) {
  constexpr double kMinClearance = 3.0;
  for (const Trajectory& h : placed) {
    const AgentState& o = h.back();
    if (separation_margin(s, o) < kMinClearance) return true;
  }
  return false;
}

Scenario make_scenario(ScenarioFamily family, int index, std::uint64_t seed,
                       const SimConfig& sim, const GeneratorConfig& gen) {
  Scenario sc;
  char id[64];
  std::snprintf(id, sizeof id, "%s-%llu-%05d", std::string(to_string(family)).c_str(),
                static_cast<unsigned long long>(seed), index);
  sc.scenario_id = id;
  sc.rng_seed = substream_seed(seed, {static_cast<std::uint64_t>(family),
                                      static_cast<std::uint64_t>(index)});
  sc.family = family;
  sc.dt = sim.dt;
  sc.horizon = sim.horizon;
  Rng rng(sc.rng_seed);

  FamilyLayout layout = layout_for(family);
  sc.map = layout.map;
  const int target = uniform_int(rng, gen.min_agents, gen.max_agents);

  for (int attempt = 0; static_cast<int>(sc.initial_history.size()) < target && attempt < 60;
       ++attempt) {
    const bool is_ego = sc.initial_history.empty();
    const Stream& stream =
        is_ego ? layout.ego
               : layout.others[static_cast<std::size_t>(
                     uniform_int(rng, 0, static_cast<int>(layout.others.size()) - 1))];
    const RoutePath route(sc.map, stream.lanes);
    const double speed = uniform(rng, stream.v_lo, stream.v_hi);
    const double arrival = uniform(rng, stream.t_lo, stream.t_hi);
    const double s_ref = route.project(stream.reference).arc_length;
    const double s0 = s_ref - speed * arrival;
    const double back = speed * sim.dt * (sim.history_steps - 1);
    if (s0 - back < 2.0) continue;

    const int agent_id = static_cast<int>(sc.initial_history.size());
    Trajectory history;
    for (int k = sim.history_steps - 1; k >= 0; --k) {
      const double s = s0 - speed * sim.dt * k;
      const Vec2 p = route.point_at(s);
      AgentState st;
      st.x = p.x();
      st.y = p.y();
      st.heading = normalize_angle(route.heading_at(s));
      st.speed = speed;
      st.length = uniform(rng, 4.2, 5.0);
      st.width = uniform(rng, 1.8, 2.1);
      st.agent_id = agent_id;
      if (!history.empty()) {
        st.length = history.front().length;
        st.width = history.front().width;
      }
      history.push_back(st);
    }
    if (overlaps_any(history.back(), sc.initial_history)) continue;

    const double goal_s = std::min(s0 + speed * sim.dt * sim.horizon, route.length() - 10.0);
    sc.goals.push_back({route.point_at(goal_s), normalize_angle(route.heading_at(goal_s))});
    sc.map.routes[agent_id] = stream.lanes;
    sc.initial_history.push_back(std::move(history));
  }
  if (sc.initial_history.size() < 2)
    throw std::runtime_error("scenario generation failed to place two agents: " + sc.scenario_id);

  if (uniform01(rng) < gen.inattentive_fraction) {
    const int who = uniform_int(rng, 0, static_cast<int>(sc.num_agents()) - 1);
    sc.inattentive_agents.push_back(sc.agent_id(static_cast<std::size_t>(who)));
  }

  quantize_for_storage(sc);
  Rng demo_rng = make_rng(sc.rng_seed, {0xde30});
  sc.demo = run_demonstrator(sc, sim, DemonstratorParams{}, demo_rng);
  quantize_for_storage(sc);
  return sc;
}

}  // namespace

std::vector<Scenario> generate_scenarios(ScenarioFamily family, int count, std::uint64_t seed,
                                         const SimConfig& sim, const GeneratorConfig& gen) {
  if (count < 1) throw std::invalid_argument("generate_scenarios: count must be >= 1");
  if (gen.min_agents < 2 || gen.max_agents < gen.min_agents)
    throw std::invalid_argument("generate_scenarios: need 2 <= min_agents <= max_agents");
  validate(sim);
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_scenario(family, i, seed, sim, gen));
  return out;
}

std::vector<Scenario> generate_corpus(const std::vector<FamilyMix>& mix, int count,
                                      std::uint64_t seed, const SimConfig& sim,
                                      const GeneratorConfig& gen) {
  if (count < 1) throw std::invalid_argument("generate_corpus: count must be >= 1");
  if (mix.empty()) throw std::invalid_argument("generate_corpus: empty family mix");
  double total = 0.0;
  for (const FamilyMix& m : mix) total += m.weight;
  if (!(total > 0.0)) throw std::invalid_argument("generate_corpus: weights must sum to > 0");

  // Largest-remainder apportionment of count over the mix.
  std::vector<int> counts(mix.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const double exact = count * mix[k].weight / total;
    counts[k] = static_cast<int>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - counts[k], k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < count; ++r, ++assigned) ++counts[remainders[r].second];

  std::vector<Scenario> out;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    if (counts[k] == 0) continue;
    auto part = generate_scenarios(mix[k].family, counts[k], substream_seed(seed, {k}), sim, gen);
    for (auto& s : part) out.push_back(std::move(s));
  }
  Rng rng = make_rng(seed, {0xc0de});
  for (std::size_t i = out.size(); i > 1; --i)
    std::swap(out[i - 1], out[static_cast<std::size_t>(rng() % i)]);
  return out;
}

}  // namespace grbo
