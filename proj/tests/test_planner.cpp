#include "fixtures.hpp"

#include "grbo/eval.hpp"
#include "grbo/planner.hpp"
#include "grbo/scenario_io.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace grbo;

namespace {

PlannerConfig topk_only(PlannerConfig cfg = {}) {
  cfg.warm_rollouts = 0;
  return cfg;
}

// A model whose logits depend only on its output bias.
PolicyModel bias_model(const Eigen::VectorXd& b2) {
  PolicyModel m = PolicyModel::zeros(TokenVocabulary{}, FeatureConfig{}, 4);
  m.params.b2 = b2;
  return m;
}

}  // namespace

TEST_CASE("score: worked examples") {
  const PlannerConfig cfg;
  CHECK(score_rollout({0, 0, 0}, {0.0, 0.0}, cfg) == 0.0);
  CHECK(score_rollout({0, 0, 1}, {1.0, 2.0}, cfg) == doctest::Approx(-51.5));
  CHECK_THROWS_AS(score_rollout({0, 1}, {1.0, 2.0}, cfg), std::invalid_argument);
  // A rollout in collision at every step scores below any collision-free one with mean |accel|
  // under w_c. A single colliding step is diluted by 1/T and does not have this property.
  const double crash = score_rollout({0, 1, 1, 1}, {0.0, 0.0, 0.0}, cfg);
  const double harsh = score_rollout({0, 0, 0, 0}, {99.0, 99.0, 99.0}, cfg);
  CHECK(crash < harsh);
}

TEST_CASE("warm-K selection") {
  const SimConfig sim;
  const TokenVocabulary vocab;
  PlannerConfig cfg;
  AgentState now;
  now.speed = 6.0;
  Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(49, 0.0, 4.8);  // token 48 most probable
  const Eigen::VectorXd lp = log_softmax(z);

  SUBCASE("exact match wins regardless of rank") {
    const AgentState target = transition(now, detokenize(MotionToken{44}, vocab), sim);
    const auto pick = warm_k_select(lp, now, &target, 5, cfg, vocab, sim);
    REQUIRE(pick);
    CHECK(pick->token.index == 44);
    CHECK(pick->log_prob == lp[44]);
  }
  SUBCASE("K = 1 is argmax") {
    const AgentState target = transition(now, detokenize(MotionToken{0}, vocab), sim);
    CHECK(warm_k_select(lp, now, &target, 1, cfg, vocab, sim)->token.index == 48);
  }
  SUBCASE("equidistant candidates go to the more probable token") {
    // Yaw levels +-0.2 around zero: from a zero heading the successors of tokens 3 and 5 are exact
    // mirror images about the successor of token 4.
    const TokenVocabulary small({-1.0, 0.0, 1.0}, {-0.2, 0.0, 0.2});
    Eigen::VectorXd zz = Eigen::VectorXd::Zero(9);
    zz[3] = 2.0;
    zz[5] = 3.0;
    const AgentState target = transition(now, detokenize(MotionToken{4}, small), sim);
    const AgentState a = transition(now, detokenize(MotionToken{3}, small), sim);
    const AgentState b = transition(now, detokenize(MotionToken{5}, small), sim);
    REQUIRE(alignment_distance(a, target, cfg) == alignment_distance(b, target, cfg));
    CHECK(warm_k_select(log_softmax(zz), now, &target, 2, cfg, small, sim)->token.index == 5);
    zz[3] = 3.0;
    CHECK(warm_k_select(log_softmax(zz), now, &target, 2, cfg, small, sim)->token.index == 3);
  }
  SUBCASE("no aligned state") { CHECK_FALSE(warm_k_select(lp, now, nullptr, 5, cfg, vocab, sim)); }
}

TEST_CASE("plan rollouts: mode schedule") {
  const SimConfig sim;
  const Scenario sc = fixture::straight_road({40.0, 20.0, 5.0}, {6.0, 8.0, 9.0}, 300.0);
  const FeatureContext ctx(sc, sim);
  const PolicyModel m = fixture::random_model(7, 16);
  const SceneState scene = initial_scene(sc);
  PlannerConfig cfg;

  SUBCASE("first replan is pure Top-K") {
    Rng a(1), b(1);
    const auto hybrid = generate_plan_rollouts(m, ctx, scene, PlanState{}, cfg, a);
    const auto plain = generate_plan_rollouts(m, ctx, scene, PlanState{}, topk_only(cfg), b);
    for (std::size_t r = 0; r < hybrid.size(); ++r) {
      CHECK_FALSE(hybrid[r].warm);
      CHECK(hybrid[r].rollout.tokens == plain[r].rollout.tokens);
    }
  }

  // A plan from an earlier step.
  PlanState plan;
  Rng p(3);
  rhp_step(m, ctx, scene, plan, cfg, p);
  REQUIRE(plan.at(1) != nullptr);

  SUBCASE("T_w = 0 reproduces pure Top-K bit for bit") {
    PlannerConfig zero = cfg;
    zero.warm_steps = 0;
    Rng a(5), b(5);
    const auto warm = generate_plan_rollouts(m, ctx, scene, plan, zero, a);
    const auto plain = generate_plan_rollouts(m, ctx, scene, plan, topk_only(cfg), b);
    for (std::size_t r = 0; r < warm.size(); ++r) {
      CHECK(warm[r].rollout.tokens == plain[r].rollout.tokens);
      CHECK(warm[r].rollout.states == plain[r].rollout.states);
      CHECK(warm[r].score == plain[r].score);
    }
  }
  SUBCASE("N_w = 4, T_w = 2: the first two ego tokens of four rollouts are deterministic") {
    Rng a(11), b(12);
    const auto x = generate_plan_rollouts(m, ctx, scene, plan, cfg, a);
    const auto y = generate_plan_rollouts(m, ctx, scene, plan, cfg, b);
    int differ_later = 0;
    for (std::size_t r = 0; r < 8; ++r) {
      CHECK(x[r].warm == (r < 4));
      if (r < 4) {
        CHECK(x[r].rollout.tokens[0][0] == y[r].rollout.tokens[0][0]);
        CHECK(x[r].rollout.tokens[0][1] == y[r].rollout.tokens[0][1]);
      }
      differ_later += x[r].rollout.tokens != y[r].rollout.tokens;
    }
    CHECK(differ_later > 0);
  }
}

TEST_CASE("receding-horizon step") {
  const SimConfig sim;
  const Scenario sc = fixture::straight_road({40.0, 20.0}, {6.0, 8.0}, 1000.0);
  const FeatureContext ctx(sc, sim);
  const PolicyModel m = fixture::random_model(9, 16);

  SUBCASE("N = 1 executes the sole rollout's first action") {
    PlannerConfig one;
    one.rollouts = 1;
    one.warm_rollouts = 0;
    PlanState plan;
    Rng a(4), b(4);
    const RhpDecision d = rhp_step(m, ctx, initial_scene(sc), plan, one, a);
    const auto rs = generate_plan_rollouts(m, ctx, initial_scene(sc), PlanState{}, one, b);
    CHECK(d.selected == 0);
    CHECK(d.ego_action.token.index == rs[0].rollout.tokens[0][0]);
  }
  SUBCASE("selection is the best score") {
    PlanState plan;
    Rng a(6);
    const RhpDecision d = rhp_step(m, ctx, initial_scene(sc), plan, PlannerConfig{}, a);
    for (double s : d.scores) CHECK(s <= d.scores[static_cast<std::size_t>(d.selected)]);
    CHECK(plan.times.front() == 0);
    CHECK(plan.states.size() == static_cast<std::size_t>(PlannerConfig{}.plan_horizon) + 1);
  }
  SUBCASE("80 replans log 80 executed actions") {
    PlanState plan;
    SceneState scene = initial_scene(sc);
    PlannerConfig cfg;
    cfg.rollouts = 2;
    cfg.warm_rollouts = 1;
    cfg.plan_horizon = 5;
    for (int t = 0; t < 80; ++t) {
      Rng rng(static_cast<std::uint64_t>(t));
      const RhpDecision d = rhp_step(m, ctx, scene, plan, cfg, rng);
      std::vector<AgentState> next = scene.current();
      next[0] = transition(next[0], detokenize(d.ego_action.token, m.vocab), sim);
      scene.advance(next, 4);
    }
    CHECK(plan.executed_tokens.size() == 80);
  }
}

TEST_CASE("closed-loop episodes") {
  const SimConfig sim;
  PlannerConfig cfg;
  cfg.plan_horizon = 10;

  SUBCASE("scripted ego on an empty road reaches the goal") {
    const Scenario sc = fixture::straight_road({5.0}, {8.0}, 60.0);
    DemonstratorParams quiet;
    quiet.accel_noise_std = quiet.yaw_noise_std = 0.0;
    const Episode ep = run_scripted_ego(fixture::random_model(1, 8), sc, sim, cfg, 1, quiet);
    CHECK(ep.progress >= 0.95);
    CHECK_FALSE(ep.collided);
  }
  const auto scenarios = generate_scenarios(ScenarioFamily::unprotected_right_turn, 2, 5);
  const PolicyModel m = fixture::random_model(3, 16);
  SUBCASE("reruns are identical") {
    const Episode a = run_closed_loop(m, scenarios[0], sim, cfg, 9);
    const Episode b = run_closed_loop(m, scenarios[0], sim, cfg, 9);
    CHECK(episode_trace_json(a, "{}") == episode_trace_json(b, "{}"));
    CHECK(a.steps.size() == a.ego_accel.size());
    CHECK(a.states[0].size() == a.steps.size() + 1);
    CHECK(a.progress >= 0.0);
    CHECK(a.progress <= 1.0);
  }
  SUBCASE("T_w = 0 or N_w = 0 traces equal pure Top-K traces") {
    PlannerConfig no_steps = cfg, no_warm = cfg;
    no_steps.warm_steps = 0;
    no_warm.warm_rollouts = 0;
    for (const Scenario& sc : scenarios) {
      const std::string a = episode_trace_json(run_closed_loop(m, sc, sim, no_steps, 2), "{}");
      const std::string b = episode_trace_json(run_closed_loop(m, sc, sim, no_warm, 2), "{}");
      CHECK(a == b);
    }
  }
  SUBCASE("invalid planner settings") {
    PlannerConfig bad = cfg;
    bad.warm_rollouts = 9;
    CHECK_THROWS_AS(run_closed_loop(m, scenarios[0], sim, bad, 1), std::invalid_argument);
    bad = cfg;
    bad.top_k = 0;
    CHECK_THROWS_AS(run_closed_loop(m, scenarios[0], sim, bad, 1), std::invalid_argument);
  }
}

TEST_CASE("open-loop collision rate: degenerate worlds") {
  const SimConfig sim;
  Eigen::VectorXd hold = Eigen::VectorXd::Zero(49);
  hold[TokenVocabulary{}.zero_token()] = 50.0;
  const PolicyModel keep_going = bias_model(hold);

  SUBCASE("frozen agents never collide") {
    std::vector<Scenario> world{fixture::straight_road({40.0, 20.0, 0.0}, {0.0, 0.0, 0.0})};
    CHECK(collision_rate(keep_going, world, sim, 3, 1, 1) == 0.0);
  }
  SUBCASE("head-on pair always collides") {
    Scenario s = fixture::straight_road({10.0, 90.0}, {8.0, 8.0});
    s.map.lanes.push_back(Lane{2, {Vec2(100.0, 0.0), Vec2(0.0, 0.0)}, 3.5, {}});
    s.map.routes[2] = {2};
    for (AgentState& a : s.initial_history[1]) {
      a.heading = std::numbers::pi;
      a.x = 180.0 - a.x;
    }
    s.goals[1] = Goal{Vec2(0.0, 0.0), std::numbers::pi};
    const std::vector<Scenario> world{s};
    const OpenLoopResult r = evaluate_open_loop(keep_going, world, sim, 4, 1, 1);
    CHECK(r.rate() == 1.0);
    CHECK(r.agent_rollouts == 8);
  }
}

TEST_CASE("safety-critical split") {
  const SimConfig sim;
  auto corpus = generate_scenarios(ScenarioFamily::crossing, 100, 8);
  for (Scenario& s : corpus) s.horizon = 10;
  const PolicyModel m = fixture::random_model(2, 8);
  const CriticalSplit split = safety_critical_split(m, corpus, sim, 0.1, 1, 5, 3);
  CHECK(split.critical.size() == 10);
  CHECK(split.rest.size() == 90);
  for (std::size_t k = 1; k < split.critical.size(); ++k)
    CHECK(split.stats[split.critical[k - 1]].rate() >= split.stats[split.critical[k]].rate());
  const CriticalSplit all = safety_critical_split(m, corpus, sim, 1.0, 1, 5, 3);
  CHECK(all.critical.size() == 100);
  CHECK(all.rest.empty());
}

TEST_CASE("closed-loop summary statistics") {
  Episode e;
  e.progress = 0.6;
  e.ego_accel = {1.0, 3.0};
  const ClosedLoopSummary one = closed_loop_metrics({e});
  CHECK(one.std_progress == 0.0);
  CHECK(one.mean_accel == 2.0);
  Episode g;
  g.progress = 1.0;
  g.goal_reached = true;
  const ClosedLoopSummary done = closed_loop_metrics({g, g, g});
  CHECK(done.mean_progress == 1.0);
  const ClosedLoopSummary mixed = closed_loop_metrics({e, g});
  CHECK(mixed.std_progress == doctest::Approx(std::sqrt(0.08)));
}

TEST_CASE("reports: serialisation and comparison") {
  const SimConfig sim;
  const auto scenarios = generate_scenarios(ScenarioFamily::straight, 3, 1);
  const PolicyModel m = fixture::random_model(5, 8);
  EvalReport rep = open_loop_report(evaluate_open_loop(m, scenarios, sim, 2, 5, 4), scenarios);
  rep.sampling = "topk";
  rep.model_checksum = m.checksum();
  const std::string text = report_json(rep);
  const EvalReport back = parse_report(text);
  CHECK(report_json(back) == text);
  CHECK(back.collision_rate() == rep.collision_rate());
  CHECK(report_csv(rep).find("scenario_id") == 0);

  const nlohmann::json cmp = nlohmann::json::parse(compare_reports(rep, rep, "{}"));
  for (const auto& row : cmp["metrics"])
    if (!row["delta"].is_null()) CHECK(row["delta"].get<double>() == 0.0);
  CHECK(relative_delta(0.0, 1.0) == std::nullopt);
  CHECK(*relative_delta(0.5, 0.25) == doctest::Approx(-0.5));
  CHECK_THROWS_AS(parse_report("{\"format_version\": 1}"), FormatError);
}

TEST_CASE("training curves parser") {
  const std::string ok =
      "iter,epoch,mean_reward,collision_rate,norm_entropy,mean_kl,objective,grad_norm\n"
      "0,1,-0.5,0.5,0.4,0.001,0.0,0.1\n"
      "1,1,-0.25,0.25,0.35,0.002,0.0,0.1\n";
  const TrainingCurves c = training_curves(ok);
  CHECK(c.iter.size() == 2);
  CHECK(c.norm_entropy[1] == 0.35);
  CHECK_THROWS_AS(training_curves(ok + "2,1,oops\n"), FormatError);
  try {
    training_curves(ok + "2,1,oops\n");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
}
