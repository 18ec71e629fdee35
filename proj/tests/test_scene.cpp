#include "fixtures.hpp"
#include "oracles.hpp"

#include "grbo/demonstrator.hpp"
#include "grbo/map.hpp"
#include "grbo/scenario.hpp"
#include "grbo/scenario_io.hpp"
#include "grbo/scene.hpp"

#include <doctest.h>

using namespace grbo;

TEST_CASE("transition: fixed point, straight line, speed clamp") {
  const SimConfig cfg;
  AgentState s;
  s.x = 3.0;
  s.y = -2.0;
  s.heading = 0.7;
  CHECK(transition(s, {0.0, 0.0}, cfg) == s);

  AgentState m;
  m.speed = 10.0;
  const AgentState n = transition(m, {0.0, 0.0}, cfg);
  CHECK(n.x == doctest::Approx(1.0));
  CHECK(n.y == doctest::Approx(0.0));
  CHECK(n.speed == 10.0);

  m.speed = 14.8;
  CHECK(transition(m, {5.0, 0.0}, cfg).speed == 15.0);
  m.speed = 0.1;
  CHECK(transition(m, {-4.0, 0.0}, cfg).speed == 0.0);
}

TEST_CASE("transition keeps heading wrapped") {
  const SimConfig cfg;
  AgentState s;
  s.heading = 3.1;
  s.speed = 5.0;
  const AgentState n = transition(s, {0.0, 0.5}, cfg);
  CHECK(n.heading > -std::numbers::pi);
  CHECK(n.heading <= std::numbers::pi);
  CHECK(n.heading == doctest::Approx(normalize_angle(3.15)));
}

TEST_CASE("SAT collision: contract examples") {
  AgentState a, b;
  a.length = b.length = 4.0;
  a.width = b.width = 2.0;
  CHECK(check_collision(a, a));
  b.x = 100.0;
  CHECK_FALSE(check_collision(a, b));
  b.x = 4.1;
  CHECK_FALSE(check_collision(a, b));
  CHECK_FALSE(oracle::overlap_by_sampling(a, b));
  b.x = 3.9;
  CHECK(check_collision(a, b));
  CHECK(oracle::overlap_by_sampling(a, b));
}

TEST_CASE("SAT collision agrees with grid sampling on random pairs") {
  Rng rng(11);
  int disagreements = 0, checked = 0;
  for (int n = 0; n < 400; ++n) {
    AgentState a, b;
    a.heading = uniform(rng, -3.1, 3.1);
    b.heading = uniform(rng, -3.1, 3.1);
    b.x = uniform(rng, -6.0, 6.0);
    b.y = uniform(rng, -6.0, 6.0);
    a.length = uniform(rng, 3.0, 5.0);
    b.width = uniform(rng, 1.5, 2.5);
    // Near-tangent pairs are below the sampling resolution.
    if (std::abs(separation_margin(a, b)) < 0.05) continue;
    ++checked;
    if (check_collision(a, b) != oracle::overlap_by_sampling(a, b, 120)) ++disagreements;
  }
  CHECK(checked > 300);
  CHECK(disagreements == 0);
}

TEST_CASE("route progress along a straight route") {
  const RoutePath route({Vec2(0.0, 0.0), Vec2(100.0, 0.0)});
  const Vec2 goal(100.0, 0.0);
  AgentState s;
  CHECK(route_progress(s, route, goal).fraction == 0.0);
  s.x = 100.0;
  CHECK(route_progress(s, route, goal).fraction == 1.0);
  s.x = 40.0;
  CHECK(route_progress(s, route, goal).fraction == doctest::Approx(0.4));
  s.y = 30.0;
  const RouteProgress off = route_progress(s, route, goal, 0.25);
  CHECK(off.off_route);
  CHECK(off.fraction == 0.25);
}

TEST_CASE("route path projection and extrapolation") {
  const RoutePath route({Vec2(0.0, 0.0), Vec2(10.0, 0.0), Vec2(10.0, 10.0)});
  CHECK(route.length() == doctest::Approx(20.0));
  const Projection p = route.project(Vec2(5.0, 1.0));
  CHECK(p.arc_length == doctest::Approx(5.0));
  CHECK(p.lateral == doctest::Approx(1.0));
  CHECK(route.point_at(25.0).y() == doctest::Approx(15.0));
  CHECK(route.heading_at(15.0) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("map validation rejects dangling successors") {
  MapContext map;
  map.lanes.push_back(Lane{1, {Vec2(0, 0), Vec2(10, 0)}, 3.5, {7}});
  CHECK_THROWS_AS(validate(map), std::invalid_argument);
}

TEST_CASE("scenario generation") {
  const SimConfig sim;
  SUBCASE("deterministic per seed") {
    const auto a = serialize_scenarios(generate_scenarios(ScenarioFamily::straight, 1, 7));
    const auto b = serialize_scenarios(generate_scenarios(ScenarioFamily::straight, 1, 7));
    CHECK(a == b);
  }
  SUBCASE("crossing corpus satisfies the invariants") {
    const auto scenarios = generate_scenarios(ScenarioFamily::crossing, 100, 1);
    CHECK(scenarios.size() == 100);
    for (const Scenario& s : scenarios) CHECK_NOTHROW(validate(s, sim));
  }
  SUBCASE("right-turn demos contain close encounters") {
    const auto scenarios = generate_scenarios(ScenarioFamily::unprotected_right_turn, 50, 3);
    int close = 0;
    for (const Scenario& s : scenarios) close += min_demo_gap(s) < 2.0;
    CHECK(close >= 1);
  }
  SUBCASE("bad count") {
    CHECK_THROWS_AS(generate_scenarios(ScenarioFamily::merge, 0, 1), std::invalid_argument);
  }
  SUBCASE("mix respects the family weights") {
    const auto corpus = generate_corpus({{ScenarioFamily::crossing, 0.35},
                                         {ScenarioFamily::unprotected_right_turn, 0.35},
                                         {ScenarioFamily::straight, 0.15},
                                         {ScenarioFamily::merge, 0.15}},
                                        40, 5);
    int hard = 0;
    for (const Scenario& s : corpus)
      hard += s.family == ScenarioFamily::crossing || s.family == ScenarioFamily::unprotected_right_turn;
    CHECK(corpus.size() == 40);
    CHECK(hard == 28);
  }
}

TEST_CASE("scenario files round-trip byte for byte") {
  auto scenarios = generate_scenarios(ScenarioFamily::merge, 3, 9);
  const std::string once = serialize_scenarios(scenarios);
  const std::string twice = serialize_scenarios(parse_scenarios(once));
  CHECK(once == twice);
  CHECK_THROWS_AS(parse_scenarios("{\"format_version\": 99, \"scenarios\": []}"), FormatError);
  CHECK_THROWS_AS(parse_scenarios("not json"), FormatError);
}

TEST_CASE("demonstrator behaviour") {
  SimConfig sim;
  DemonstratorParams quiet;
  quiet.accel_noise_std = 0.0;
  quiet.yaw_noise_std = 0.0;

  SUBCASE("lone agent reaches the end of a straight lane") {
    const Scenario s = fixture::straight_road({5.0}, {8.0}, 60.0);
    Rng rng(1);
    const auto traj = run_demonstrator(s, sim, quiet, rng);
    const ScenarioGeometry geo(s);
    CHECK(geo.progress(0, traj[0].back()) >= 0.95);
  }
  SUBCASE("attentive follower keeps its distance") {
    const Scenario s = fixture::straight_road({30.0, 10.0}, {3.0, 10.0}, 200.0);
    Rng rng(1);
    const auto traj = run_demonstrator(s, sim, quiet, rng);
    for (std::size_t t = 0; t < traj[0].size(); ++t) CHECK_FALSE(check_collision(traj[0][t], traj[1][t]));
  }
  SUBCASE("inattentive follower at a small gap collides for some seed") {
    int hits = 0;
    for (int seed = 0; seed < 20; ++seed) {
      Scenario s = fixture::straight_road({18.0, 8.0}, {0.0, 12.0}, 200.0);
      s.inattentive_agents = {2};
      Rng rng(static_cast<std::uint64_t>(seed));
      const auto traj = run_demonstrator(s, sim, DemonstratorParams{}, rng);
      bool hit = false;
      for (std::size_t t = 0; t < traj[0].size(); ++t) hit = hit || check_collision(traj[0][t], traj[1][t]);
      hits += hit;
    }
    CHECK(hits >= 1);
  }
}
