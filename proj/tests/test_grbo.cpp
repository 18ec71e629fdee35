#include "fixtures.hpp"
#include "oracles.hpp"

#include "grbo/eval.hpp"
#include "grbo/grbo.hpp"

#include <doctest.h>

#include <set>

using namespace grbo;

namespace {

PolicyModel perturbed(const PolicyModel& m, double sigma, std::uint64_t seed) {
  PolicyModel out = m;
  Rng rng(seed);
  out.params.for_each([&](auto& a) {
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] += sigma * standard_normal(rng);
  });
  return out;
}

Scenario short_scene(int horizon) {
  Scenario s = fixture::straight_road({30.0, 20.0, 8.0}, {2.0, 6.0, 9.0});
  s.horizon = horizon;
  return s;
}

}  // namespace

TEST_CASE("rewards are per-agent collision indicators") {
  const SimConfig sim;
  // Two cars 3 m apart nose to tail and closing, a third far away.
  Scenario s = fixture::straight_road({10.0, 6.0, 60.0}, {0.0, 8.0, 5.0});
  s.horizon = 10;
  const PolicyModel m = PolicyModel::zeros(TokenVocabulary{}, FeatureConfig{}, 4);
  const FeatureContext ctx(s, sim);
  Rng rng(1);
  const RolloutGroup g = sample_rollout_group(m, ctx, 4, 1, rng);  // K = 1: deterministic argmax
  for (const auto& row : g.rewards) {
    CHECK(row[0] == -1.0);
    CHECK(row[1] == -1.0);
    CHECK(row[2] == 0.0);
  }
  for (const auto& row : g.advantages)
    for (double a : row) CHECK(a == 0.0);
}

TEST_CASE("group advantages: worked examples") {
  using V = std::vector<std::vector<double>>;
  const V a = compute_group_advantages(V{{-1.0}, {0.0}, {0.0}, {0.0}});
  CHECK(a[0][0] == -0.75);
  CHECK(a[1][0] == 0.25);
  const V b = compute_group_advantages(V{{-1.0}, {-1.0}, {0.0}, {0.0}});
  CHECK(b[0][0] == -0.5);
  CHECK(b[3][0] == 0.5);
  const V c = compute_group_advantages(V{{-1.0, 0.0}, {-1.0, 0.0}});
  for (const auto& row : c)
    for (double x : row) CHECK(x == 0.0);
  CHECK_THROWS_AS(compute_group_advantages(V{{-1.0}}), std::invalid_argument);
}

TEST_CASE("group advantages sum to zero per agent") {
  Rng rng(4);
  for (int n = 0; n < 1000; ++n) {
    const int G = uniform_int(rng, 2, 16), N = uniform_int(rng, 1, 8);
    std::vector<std::vector<double>> r(static_cast<std::size_t>(G), std::vector<double>(static_cast<std::size_t>(N)));
    for (auto& row : r)
      for (double& x : row) x = uniform01(rng) < 0.3 ? -1.0 : 0.0;
    const auto a = compute_group_advantages(r);
    for (int i = 0; i < N; ++i) {
      double s = 0.0;
      for (int j = 0; j < G; ++j) s += a[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      REQUIRE(std::abs(s) < 1e-9);
    }
  }
}

TEST_CASE("k3 estimator") {
  CHECK(kl_estimate(-1.3, -1.3) == 0.0);
  CHECK(kl_estimate(-2.0, -1.0) == doctest::Approx(std::exp(1.0) - 2.0));
  Rng rng(2);
  for (int n = 0; n < 10000; ++n) {
    const double a = uniform(rng, -10.0, 0.0), b = uniform(rng, -10.0, 0.0);
    REQUIRE(kl_estimate(a, b) >= 0.0);
    if (a != b) REQUIRE(kl_estimate(a, b) > 0.0);
  }
}

TEST_CASE("k3 Monte Carlo mean matches the exact KL") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd zp(8), zq(8);
    for (int c = 0; c < 8; ++c) {
      zp[c] = standard_normal(rng);
      zq[c] = standard_normal(rng);
    }
    const Eigen::VectorXd lp = log_softmax(zp), lq = log_softmax(zq);
    const double exact = oracle::categorical_kl(lp.array().exp().matrix(), lq.array().exp().matrix());
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
      const int a = sample_top_k(lp, 8, rng).token.index;
      const double v = kl_estimate(lp[a], lq[a]);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - exact) < 3.0 * se);
  }
}

TEST_CASE("clipped surrogate") {
  SUBCASE("positive advantage saturates at 1 + eps_high") {
    for (double r : {0.5, 0.8, 1.0, 1.3, 1.4}) {
      const ClippedTerm t = clipped_surrogate(r, 1.0, 0.2, 0.4);
      CHECK(t.value == doctest::Approx(r));
      CHECK(t.dvalue_dlogp == doctest::Approx(r));
    }
    const ClippedTerm t = clipped_surrogate(2.0, 1.0, 0.2, 0.4);
    CHECK(t.value == doctest::Approx(1.4));
    CHECK(t.dvalue_dlogp == 0.0);
  }
  SUBCASE("negative advantage saturates at 1 - eps_low") {
    const ClippedTerm t = clipped_surrogate(0.5, -1.0, 0.2, 0.4);
    CHECK(t.value == doctest::Approx(-0.8));
    CHECK(t.dvalue_dlogp == 0.0);
    CHECK(clipped_surrogate(3.0, -1.0, 0.2, 0.4).value == doctest::Approx(-3.0));
  }
  SUBCASE("clip band is [0.8, 1.4] with the defaults") {
    const TrainConfig cfg;
    CHECK(1.0 - cfg.clip_low == 0.8);
    CHECK(1.0 + cfg.clip_high == 1.4);
    CHECK(cfg.group_size == 8);
    CHECK(cfg.beta == 0.1);
    CHECK(cfg.warm_k_steps == 2);
  }
  SUBCASE("pessimism over random pairs") {
    Rng rng(6);
    for (int n = 0; n < 100000; ++n) {
      const double r = std::exp(uniform(rng, -3.0, 3.0)), A = uniform(rng, -2.0, 2.0);
      const ClippedTerm t = clipped_surrogate(r, A, 0.2, 0.4);
      REQUIRE(t.value <= r * A);
      REQUIRE(t.value == std::min(r * A, std::clamp(r, 0.8, 1.4) * A));
    }
  }
}

TEST_CASE("sampling: bookkeeping, determinism, degenerate policy") {
  const SimConfig sim;
  const Scenario s = short_scene(6);
  const FeatureContext ctx(s, sim);
  const PolicyModel m = fixture::random_model(3, 8);
  Rng a(5), b(5);
  const RolloutGroup g1 = sample_rollout_group(m, ctx, 4, 5, a);
  const RolloutGroup g2 = sample_rollout_group(m, ctx, 4, 5, b);
  for (std::size_t j = 0; j < 4; ++j) CHECK(g1.rollouts[j].tokens == g2.rollouts[j].tokens);
  for (const Rollout& r : g1.rollouts) {
    CHECK(r.steps() == 6);
    for (std::size_t i = 0; i < r.num_agents(); ++i)
      for (int t = 0; t < r.steps(); ++t) {
        const Eigen::VectorXd lp = log_probs(m, r.features[i].col(t));
        REQUIRE(lp[r.tokens[i][static_cast<std::size_t>(t)]] == r.log_probs[i][static_cast<std::size_t>(t)]);
      }
  }
  PolicyModel peaked = m;
  peaked.params.b2[17] = 60.0;
  Rng c(9);
  const RolloutGroup same = sample_rollout_group(peaked, ctx, 6, 5, c);
  for (const Rollout& r : same.rollouts) CHECK(r.tokens == same.rollouts[0].tokens);
}

TEST_CASE("tiny instance: sampled rollouts follow the exact sequence distribution") {
  const SimConfig sim;
  Scenario s = fixture::straight_road({10.0}, {4.0});
  s.horizon = 2;
  const FeatureContext ctx(s, sim);
  const PolicyModel m = fixture::random_model(21, 6, fixture::four_tokens(), 2.0);
  const auto exact = oracle::enumerate_single_agent(m, ctx, initial_scene(s), 2);
  REQUIRE(exact.size() == 16);
  std::map<std::vector<int>, long> seen;
  Rng rng(77);
  for (int n = 0; n < 25000; ++n) {
    const RolloutGroup g = sample_rollout_group(m, ctx, 4, 4, rng);
    for (const Rollout& r : g.rollouts) ++seen[r.tokens[0]];
  }
  std::vector<long> counts;
  std::vector<double> probs;
  for (const auto& [seq, p] : exact) {
    counts.push_back(seen[seq]);
    probs.push_back(p);
  }
  CHECK(seen.size() <= 16);
  CHECK(oracle::chi_square_p(counts, probs) > 0.01);
}

TEST_CASE("surrogate is zero when current, old and reference coincide") {
  const SimConfig sim;
  const Scenario s = short_scene(8);
  const FeatureContext ctx(s, sim);
  const PolicyModel m = fixture::random_model(2, 8);
  Rng rng(3);
  std::vector<RolloutGroup> groups{sample_rollout_group(m, ctx, 4, 5, rng)};
  Rng arng(4);
  for (auto& row : groups[0].advantages)
    for (double& a : row) a = uniform(arng, -1.0, 1.0);
  groups[0].advantages = compute_group_advantages(groups[0].advantages);
  const SurrogateResult r = grbo_surrogate_and_grad(m, m, groups, TrainConfig{});
  CHECK(std::abs(r.objective) < 1e-12);
  CHECK(r.mean_kl == 0.0);
  CHECK(r.clip_fraction == 0.0);
}

TEST_CASE("surrogate gradients match central differences on 100 random cases") {
  const SimConfig sim;
  const Scenario s = short_scene(3);
  const FeatureContext ctx(s, sim);
  Rng rng(31);
  double worst_grbo = 0.0, worst_reinforce = 0.0;
  int clipped_cases = 0;
  for (int n = 0; n < 100; ++n) {
    const auto seed = static_cast<std::uint64_t>(500 + n);
    const PolicyModel old = fixture::random_model(seed, 3, fixture::four_tokens(), 1.5);
    const PolicyModel cur = perturbed(old, 0.3, seed + 1);
    const PolicyModel ref = perturbed(old, 0.3, seed + 2);
    std::vector<RolloutGroup> groups;
    for (int g = 0; g < 2; ++g) {
      groups.push_back(sample_rollout_group(old, ctx, 3, 4, rng));
      for (auto& row : groups.back().advantages)
        for (double& a : row) a = uniform(rng, -1.0, 1.0);
    }
    TrainConfig cfg;
    cfg.beta = uniform(rng, 0.0, 1.0);
    const SurrogateResult g = grbo_surrogate_and_grad(cur, ref, groups, cfg);
    clipped_cases += g.clip_fraction > 0.0;
    const auto f = [&](const ParamSet& p) {
      return oracle::grbo_objective(p, cur, ref, groups, cfg.beta, cfg.clip_low, cfg.clip_high, true);
    };
    CHECK(g.objective == doctest::Approx(f(cur.params)).epsilon(1e-10));
    worst_grbo = std::max(worst_grbo, oracle::max_rel_error(g.gradient.flatten(),
                                                            oracle::finite_difference(cur.params, f)));

    cfg.reinforce_kl = n % 2 == 0;
    const SurrogateResult rg = reinforce_surrogate_and_grad(cur, ref, groups, cfg);
    const double beta = cfg.reinforce_kl ? cfg.beta : 0.0;
    const auto fr = [&](const ParamSet& p) {
      return oracle::grbo_objective(p, cur, ref, groups, beta, cfg.clip_low, cfg.clip_high, false);
    };
    worst_reinforce = std::max(worst_reinforce, oracle::max_rel_error(rg.gradient.flatten(),
                                                                      oracle::finite_difference(cur.params, fr)));
  }
  CHECK(clipped_cases > 50);
  CHECK(worst_grbo < 1e-4);
  CHECK(worst_reinforce < 1e-4);
}

TEST_CASE("surrogate rejects mismatched inputs") {
  const SimConfig sim;
  const Scenario s = short_scene(3);
  const FeatureContext ctx(s, sim);
  const PolicyModel small = fixture::random_model(1, 3, fixture::four_tokens());
  const PolicyModel big = fixture::random_model(1, 3);
  Rng rng(1);
  std::vector<RolloutGroup> groups{sample_rollout_group(small, ctx, 2, 2, rng)};
  CHECK_THROWS_AS(grbo_surrogate_and_grad(big, big, groups, TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(grbo_surrogate_and_grad(small, small, {}, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("REINFORCE: zero rewards with a baseline give a zero gradient") {
  const SimConfig sim;
  Scenario s = fixture::straight_road({80.0, 40.0}, {5.0, 5.0}, 300.0);
  s.horizon = 5;
  const FeatureContext ctx(s, sim);
  const PolicyModel m = fixture::random_model(4, 6);
  Rng rng(2);
  std::vector<RolloutGroup> groups{sample_rollout_group(m, ctx, 4, 5, rng), sample_rollout_group(m, ctx, 4, 5, rng)};
  assign_batch_baseline_advantages(groups);
  const SurrogateResult r = reinforce_surrogate_and_grad(perturbed(m, 0.1, 3), m, groups, TrainConfig{});
  CHECK(r.gradient.max_abs() == 0.0);
}

TEST_CASE("batch baseline subtracts the batch mean") {
  const SimConfig sim;
  const Scenario s = short_scene(3);
  const FeatureContext ctx(s, sim);
  const PolicyModel m = fixture::random_model(4, 6);
  Rng rng(2);
  std::vector<RolloutGroup> groups{sample_rollout_group(m, ctx, 2, 5, rng), sample_rollout_group(m, ctx, 2, 5, rng)};
  groups[0].rewards = {{-1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  groups[1].rewards = {{-1.0, -1.0, 0.0}, {0.0, 0.0, 0.0}};
  assign_batch_baseline_advantages(groups);
  CHECK(groups[0].advantages[0][0] == doctest::Approx(-1.0 + 0.25));
  CHECK(groups[1].advantages[1][2] == doctest::Approx(0.25));
}

TEST_CASE("RL subset size") {
  CHECK(select_rl_subset(200, 0.1, 1).size() == 20);
  CHECK(select_rl_subset(7, 0.1, 1).size() == 1);
  CHECK(select_rl_subset(30, 0.1, 1).size() == 3);
  const auto all = select_rl_subset(10, 1.0, 4);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 10);
  CHECK(select_rl_subset(200, 0.1, 1) == select_rl_subset(200, 0.1, 1));
}

TEST_CASE("training loop: log bookkeeping, instrumentation bounds, anchor limit") {
  const SimConfig sim;
  auto corpus = generate_scenarios(ScenarioFamily::crossing, 30, 2);
  for (Scenario& s : corpus) s.horizon = 20;
  const PolicyModel init = fixture::random_model(6, 16);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.group_size = 4;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.inner_updates = 2;
  cfg.learning_rate = 1e-3;
  int callbacks = 0;
  const TrainResult r = grbo_train(init, corpus, sim, cfg, [&](int, const PolicyModel&, const OptimizerState&) { ++callbacks; });
  // 3 RL scenarios, batches of 2 -> 2 batches per epoch.
  CHECK(r.log.size() == 2 * 2 * 2);
  CHECK(callbacks == 2);
  CHECK(r.reference_checksum == init.checksum());
  for (const TrainLogRow& row : r.log) {
    CHECK(row.norm_entropy >= 0.0);
    CHECK(row.norm_entropy <= 1.0);
    CHECK(row.mean_kl >= 0.0);
    CHECK(row.collision_rate == doctest::Approx(-row.mean_reward));
  }
  const TrainingCurves curves = training_curves(train_log_csv(r.log));
  CHECK(curves.iter.size() == r.log.size());

  const TrainResult again = grbo_train(init, corpus, sim, cfg);
  CHECK(again.model.checksum() == r.model.checksum());

  const TrainResult rf = reinforce_train(init, corpus, sim, cfg);
  CHECK(rf.log.size() == r.log.size());

  TrainConfig heavy = cfg;
  heavy.beta = 1e6;
  heavy.epochs = 1;
  const TrainResult h = grbo_train(init, corpus, sim, heavy);
  CHECK((h.model.params - init.params).max_abs() < 1e-2);

  TrainConfig bad = cfg;
  bad.group_size = 1;
  CHECK_THROWS_AS(grbo_train(init, corpus, sim, bad), std::invalid_argument);
  bad = cfg;
  bad.top_k = 50;
  CHECK_THROWS_AS(grbo_train(init, corpus, sim, bad), std::invalid_argument);
}
