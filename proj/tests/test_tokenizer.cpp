#include "fixtures.hpp"
#include "oracles.hpp"

#include "grbo/features.hpp"
#include "grbo/tokenizer.hpp"

#include <doctest.h>

using namespace grbo;

namespace {

// Expected token of a transition produced by `c`: the yaw level is always recoverable; when the
// speed clamps, the accel level is the one reproducing the clamped speed that lies nearest the
// implied acceleration, lower index on ties.
int expected_round_trip(const AgentState& s, int c, const SimConfig& sim, const TokenVocabulary& vocab) {
  const AgentState next = transition(s, detokenize(MotionToken{c}, vocab), sim);
  const int n_yaw = static_cast<int>(vocab.yaw_levels().size());
  const double implied = (next.speed - s.speed) / sim.dt;
  int best = -1;
  double best_d = 1e300;
  for (int a = 0; a < static_cast<int>(vocab.accel_levels().size()); ++a) {
    const double v = transition(s, {vocab.accel_levels()[static_cast<std::size_t>(a)], 0.0}, sim).speed;
    if (std::abs(v - next.speed) > 1e-9) continue;
    const double d = std::abs(vocab.accel_levels()[static_cast<std::size_t>(a)] - implied);
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  return best * n_yaw + c % n_yaw;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  const TokenVocabulary vocab;
  CHECK(vocab.size() == 49);
  CHECK(detokenize(MotionToken{vocab.zero_token()}, vocab) == ControlCommand{0.0, 0.0});
  CHECK(detokenize(MotionToken{0}, vocab) == ControlCommand{-4.0, -0.5});
  CHECK_THROWS_AS(detokenize(MotionToken{49}, vocab), std::out_of_range);
  CHECK_THROWS_AS(TokenVocabulary({-1.0, 1.0}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(TokenVocabulary({0.0}, {0.0}), std::invalid_argument);
}

TEST_CASE("tokenize_command matches exhaustive nearest-grid search") {
  const TokenVocabulary vocab;
  Rng rng(3);
  for (int n = 0; n < 5000; ++n) {
    const ControlCommand c{uniform(rng, -5.0, 5.0), uniform(rng, -0.7, 0.7)};
    REQUIRE(tokenize_command(c, vocab).index == oracle::nearest_grid_token(c, vocab));
  }
  // Exactly between two accel levels: the lower index wins.
  const double mid = 0.5 * (vocab.accel_levels()[3] + vocab.accel_levels()[4]);
  CHECK(tokenize_command({mid, 0.0}, vocab).index == vocab.index(3, 3));
}

TEST_CASE("tokenize_transition examples") {
  const SimConfig sim;
  const TokenVocabulary vocab;
  AgentState s;
  CHECK(tokenize_transition(s, s, sim, vocab).index == vocab.zero_token());
  s.speed = 7.0;
  s.heading = 0.3;
  for (int c = 0; c < vocab.size(); ++c)
    CHECK(tokenize_transition(s, transition(s, detokenize(MotionToken{c}, vocab), sim), sim, vocab).index == c);
  AgentState bad = s;
  bad.x = std::nan("");
  CHECK_THROWS_AS(tokenize_transition(s, bad, sim, vocab), std::invalid_argument);
}

TEST_CASE("round trip over randomized states, clamp ties included") {
  const SimConfig sim;
  const TokenVocabulary vocab;
  Rng rng(5);
  long ties = 0;
  for (int n = 0; n < 10000; ++n) {
    AgentState s;
    s.x = uniform(rng, -200.0, 200.0);
    s.y = uniform(rng, -200.0, 200.0);
    s.heading = uniform(rng, -3.14159, 3.14159);
    // A quarter of the states sit near a clamp so boundary ties are exercised.
    const double u = uniform01(rng);
    s.speed = u < 0.125 ? uniform(rng, 0.0, 0.4) : u < 0.25 ? uniform(rng, 14.6, 15.0) : uniform(rng, 0.0, 15.0);
    for (int c = 0; c < vocab.size(); ++c) {
      const AgentState next = transition(s, detokenize(MotionToken{c}, vocab), sim);
      const int got = tokenize_transition(s, next, sim, vocab).index;
      const int want = expected_round_trip(s, c, sim, vocab);
      ties += want != c;
      REQUIRE(got == want);
    }
  }
  CHECK(ties > 0);
}

TEST_CASE("noisy demo steps land within half a quantization cell") {
  const SimConfig sim;
  const TokenVocabulary vocab;
  const auto scenarios = generate_scenarios(ScenarioFamily::crossing, 5, 2);
  for (const Scenario& sc : scenarios) {
    for (const Trajectory& tr : *sc.demo) {
      for (std::size_t t = 0; t + 1 < tr.size(); ++t) {
        const ControlCommand c = detokenize(tokenize_transition(tr[t], tr[t + 1], sim, vocab), vocab);
        const AgentState replay = transition(tr[t], c, sim);
        const double dv = std::abs(replay.speed - tr[t + 1].speed);
        const double dh = std::abs(normalize_angle(replay.heading - tr[t + 1].heading));
        const bool clamped = tr[t + 1].speed <= 1e-9 || tr[t + 1].speed >= sim.v_max - 1e-9;
        // Commands outside the grid quantize to the edge level; those are not half-cell checks.
        const double implied_a = (tr[t + 1].speed - tr[t].speed) / sim.dt;
        const double implied_w = normalize_angle(tr[t + 1].heading - tr[t].heading) / sim.dt;
        if (!clamped && std::abs(implied_a) <= 4.0)
          CHECK(dv <= 0.5 * vocab.accel_step() * sim.dt + 1e-9);
        if (std::abs(implied_w) <= 0.5) CHECK(dh <= 0.5 * vocab.yaw_step() * sim.dt + 1e-9);
      }
    }
  }
}

TEST_CASE("features: layout and padding") {
  const SimConfig sim;
  const Scenario sc = fixture::straight_road({10.0}, {5.0});
  const FeatureContext ctx(sc, sim);
  const FeatureVector f = extract_features(ctx, 1, sc.initial_history, sc.initial_history[0].size() - 1);
  REQUIRE(f.size() == FeatureConfig{}.dim());
  CHECK(f.size() == 81);
  CHECK(f[8] == doctest::Approx(0.0));   // goal bearing
  CHECK(f[11] == doctest::Approx(0.0));  // lateral offset
  CHECK(f.segment(28, 48).isZero());     // no neighbours
  CHECK(f.segment(76, 5).isZero());      // no leader
  CHECK_THROWS_AS(extract_features(ctx, 9, sc.initial_history, 0), std::invalid_argument);
}

TEST_CASE("features are invariant to rotating the whole scene") {
  const SimConfig sim;
  const auto scenarios = generate_scenarios(ScenarioFamily::crossing, 3, 4);
  for (const Scenario& sc : scenarios) {
    Scenario rot = sc;
    const double q = std::numbers::pi / 2;
    const auto turn = [q](const Vec2& p) { return Vec2(-p.y(), p.x()); };
    for (Lane& l : rot.map.lanes)
      for (Vec2& p : l.centerline) p = turn(p);
    for (Goal& g : rot.goals) {
      g.point = turn(g.point);
      g.heading = normalize_angle(g.heading + q);
    }
    for (Trajectory& h : rot.initial_history)
      for (AgentState& a : h) {
        const Vec2 p = turn(a.position());
        a.x = p.x();
        a.y = p.y();
        a.heading = normalize_angle(a.heading + q);
      }
    const FeatureContext c0(sc, sim), c1(rot, sim);
    const std::size_t t = sc.initial_history[0].size() - 1;
    for (std::size_t i = 0; i < sc.num_agents(); ++i) {
      const FeatureVector a = extract_features(c0, sc.agent_id(i), sc.initial_history, t);
      const FeatureVector b = extract_features(c1, rot.agent_id(i), rot.initial_history, t);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("features see a neighbour ahead as a leader") {
  const SimConfig sim;
  const Scenario sc = fixture::straight_road({40.0, 10.0}, {5.0, 10.0});
  const FeatureContext ctx(sc, sim);
  const std::size_t t = sc.initial_history[0].size() - 1;
  const FeatureVector f = extract_features(ctx, 2, sc.initial_history, t);
  CHECK(f[28] == 1.0);
  CHECK(f[29] == doctest::Approx(1.0));  // 30 m ahead / 30
  CHECK(f[76] == 1.0);
  CHECK(f[77] == doctest::Approx((30.0 - 4.5) / 50.0));
  CHECK(f[79] == doctest::Approx(5.0 / 15.0));
}
