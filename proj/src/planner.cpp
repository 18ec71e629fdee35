#include "grbo/planner.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace grbo {

void PlannerConfig::validate(int vocab_size) const {
  if (rollouts < 1) throw std::invalid_argument("planner needs N >= 1");
  if (warm_rollouts < 0 || warm_rollouts > rollouts)
    throw std::invalid_argument("planner needs 0 <= N_w <= N");
  if (warm_steps < 0) throw std::invalid_argument("planner needs T_w >= 0");
  if (top_k < 1 || top_k > vocab_size) throw std::invalid_argument("planner top_k outside [1, |V|]");
  if (w_collision < 0.0 || w_accel < 0.0 || lambda_heading < 0.0 || lambda_speed < 0.0)
    throw std::invalid_argument("planner weights must be >= 0");
  if (plan_horizon < 1 || replan_period < 1)
    throw std::invalid_argument("planner horizon and replan period must be >= 1");
}

const AgentState* PlanState::at(int t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.end() || *it != t) return nullptr;
  return &states[static_cast<std::size_t>(it - times.begin())];
}

double alignment_distance(const AgentState& candidate, const AgentState& target,
                          const PlannerConfig& cfg) {
  return (candidate.position() - target.position()).norm() +
         cfg.lambda_heading * std::abs(normalize_angle(candidate.heading - target.heading)) +
         cfg.lambda_speed * std::abs(candidate.speed - target.speed);
}

std::optional<TokenSample> warm_k_select(const Eigen::VectorXd& log_probs, const AgentState& current,
                                         const AgentState* target, int k, const PlannerConfig& cfg,
                                         const TokenVocabulary& vocab, const SimConfig& sim) {
  if (target == nullptr) return std::nullopt;
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  // top_k_indices is ordered by probability then index, so a strict < keeps the tie rule.
  for (int c : top_k_indices(log_probs, k)) {
    const AgentState next = transition(current, detokenize(MotionToken{c}, vocab), sim);
    const double d = alignment_distance(next, *target, cfg);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return TokenSample{MotionToken{best}, log_probs[best]};
}

std::optional<TokenSample> warm_k_select(const PolicyModel& model, const FeatureVector& features,
                                         const AgentState& current, const AgentState* target,
                                         const PlannerConfig& cfg, const SimConfig& sim) {
  return warm_k_select(log_probs(model, features), current, target, cfg.top_k, cfg, model.vocab,
                       sim);
}

double score_rollout(const std::vector<std::uint8_t>& collided, const std::vector<double>& accel,
                     const PlannerConfig& cfg) {
  if (accel.empty()) return 0.0;
  if (collided.size() != accel.size() + 1)
    throw std::invalid_argument("score_rollout: collision flags must cover steps 0..T");
  double sum = 0.0;
  for (std::size_t t = 1; t < collided.size(); ++t)
    sum += cfg.w_collision * (collided[t] ? 1.0 : 0.0) + cfg.w_accel * accel[t - 1];
  return -sum / static_cast<double>(accel.size());
}

namespace {

std::vector<double> realized_accel(const Trajectory& states, double dt) {
  std::vector<double> out;
  for (std::size_t t = 1; t < states.size(); ++t)
    out.push_back(std::abs(states[t].speed - states[t - 1].speed) / dt);
  return out;
}

}  // namespace

std::vector<PlanRollout> generate_plan_rollouts(const PolicyModel& model, const FeatureContext& ctx,
                                                const SceneState& scene, const PlanState& plan,
                                                const PlannerConfig& cfg, Rng& rng) {
  const auto n = static_cast<std::size_t>(cfg.rollouts);
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng();
  RolloutOptions options;
  options.steps = cfg.plan_horizon;
  options.record_features = false;
  options.record_entropy = false;
  const TokenChooser top_k = top_k_chooser(cfg.top_k);
  std::vector<PlanRollout> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const bool warm = static_cast<int>(r) < cfg.warm_rollouts && !plan.empty();
    TokenChooser chooser = top_k;
    if (warm) {
      chooser = [&](std::size_t agent, int step, const AgentState& state, const Eigen::VectorXd& lp,
                    Rng& stream) -> TokenSample {
        const AgentState* target =
            agent == 0 && step < cfg.warm_steps ? plan.at(scene.time + step + 1) : nullptr;
        if (target == nullptr) return sample_top_k(lp, cfg.top_k, stream);
        // Burn the draw Top-K would have used so both modes share one stream layout.
        (void)uniform01(stream);
        return *warm_k_select(lp, state, target, cfg.top_k, cfg, model.vocab, ctx.sim);
      };
    }
    Rng stream(seeds[r]);
    PlanRollout& pr = out[r];
    pr.rollout = simulate(model, ctx, scene, options, chooser, stream);
    pr.warm = warm;
    pr.ego_accel = realized_accel(pr.rollout.states[0], ctx.sim.dt);
    pr.score = score_rollout(pr.rollout.collided[0], pr.ego_accel, cfg);
  }
  return out;
}

RhpDecision rhp_step(const PolicyModel& model, const FeatureContext& ctx, const SceneState& scene,
                     PlanState& plan, const PlannerConfig& cfg, Rng& rng) {
  const std::vector<PlanRollout> rollouts = generate_plan_rollouts(model, ctx, scene, plan, cfg, rng);
  RhpDecision d;
  std::size_t best = 0;
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    d.scores.push_back(rollouts[r].score);
    d.warm.push_back(rollouts[r].warm);
    const PlanRollout& a = rollouts[r];
    const PlanRollout& b = rollouts[best];
    if (a.score > b.score || (a.score == b.score && a.warm && !b.warm)) best = r;
  }
  d.selected = static_cast<int>(best);
  const Rollout& chosen = rollouts[best].rollout;
  d.ego_action = TokenSample{MotionToken{chosen.tokens[0][0]}, chosen.log_probs[0][0]};
  plan.states = chosen.states[0];
  plan.times.clear();
  for (std::size_t k = 0; k < plan.states.size(); ++k)
    plan.times.push_back(scene.time + static_cast<int>(k));
  plan.executed_tokens.push_back(d.ego_action.token.index);
  return d;
}

double Episode::mean_abs_accel() const {
  if (ego_accel.empty()) return 0.0;
  double s = 0.0;
  for (double a : ego_accel) s += a;
  return s / static_cast<double>(ego_accel.size());
}

namespace {

enum class EgoMode { planner, scripted };

Episode run_episode(const PolicyModel& model, const Scenario& scenario, const SimConfig& sim,
                    const PlannerConfig& cfg, std::uint64_t seed, EgoMode mode,
                    const DemonstratorParams& params) {
  cfg.validate(model.vocab_size());
  const FeatureContext ctx(scenario, sim, model.features);
  const std::size_t keep = static_cast<std::size_t>(model.features.command_history) + 1;
  const std::size_t n = scenario.num_agents();
  const std::uint64_t key = scenario_key(scenario);
  std::optional<Demonstrator> demo;
  if (mode == EgoMode::scripted) demo.emplace(scenario, params);

  Episode ep;
  ep.scenario_id = scenario.scenario_id;
  SceneState scene = initial_scene(scenario);
  for (std::size_t i = 0; i < n; ++i) ep.states.push_back({scene.recent[i].back()});
  ep.ego_collided.push_back(0);
  PlanState plan;
  std::vector<AgentState> next(n);
  std::vector<std::uint8_t> flags;

  for (int t = 0; t < scenario.horizon; ++t) {
    const std::vector<AgentState> now = scene.current();
    EpisodeStep step;
    step.time = t;
    if (mode == EgoMode::planner) {
      if (t % cfg.replan_period == 0 || plan.at(t + 1) == nullptr) {
        Rng plan_rng = make_rng(seed, {0x91a, key, static_cast<std::uint64_t>(t)});
        RhpDecision d = rhp_step(model, ctx, scene, plan, cfg, plan_rng);
        step.ego_token = d.ego_action.token.index;
        step.selected = d.selected;
        step.scores = std::move(d.scores);
        next[0] = transition(now[0], detokenize(d.ego_action.token, model.vocab), sim);
      } else {
        // Between replans the ego tracks the stored plan.
        const AgentState& target = *plan.at(t + 1);
        const TokenSample pick = *warm_k_select(log_probs(model, extract_features(ctx, 0, scene.recent[0], now)),
                                                now[0], &target, model.vocab_size(), cfg,
                                                model.vocab, sim);
        step.ego_token = pick.token.index;
        plan.executed_tokens.push_back(step.ego_token);
        next[0] = transition(now[0], detokenize(pick.token, model.vocab), sim);
      }
    } else {
      const ControlCommand c = demo->command(0, now);
      step.ego_token = tokenize_command(c, model.vocab).index;
      next[0] = transition(now[0], c, sim);
    }
    Rng env_rng = make_rng(seed, {0xe1, key, static_cast<std::uint64_t>(t)});
    for (std::size_t i = 1; i < n; ++i) {
      const Eigen::VectorXd lp = log_probs(model, extract_features(ctx, i, scene.recent[i], now));
      const TokenSample pick = sample_top_k(lp, cfg.top_k, env_rng);
      next[i] = transition(now[i], detokenize(pick.token, model.vocab), sim);
    }
    scene.advance(next, keep);
    mark_collisions(next, flags);
    for (std::size_t i = 0; i < n; ++i) ep.states[i].push_back(next[i]);
    ep.ego_collided.push_back(flags[0]);
    ep.ego_accel.push_back(std::abs(next[0].speed - now[0].speed) / sim.dt);
    ep.steps.push_back(std::move(step));
    ep.progress = ctx.geometry.progress(0, next[0], ep.progress);
    if (flags[0]) {
      ep.collided = true;
      break;
    }
    if (ep.progress >= 0.99) {
      ep.goal_reached = true;
      break;
    }
  }
  return ep;
}

}  // namespace

Episode run_closed_loop(const PolicyModel& model, const Scenario& scenario, const SimConfig& sim,
                        const PlannerConfig& cfg, std::uint64_t seed) {
  return run_episode(model, scenario, sim, cfg, seed, EgoMode::planner, {});
}

Episode run_scripted_ego(const PolicyModel& model, const Scenario& scenario, const SimConfig& sim,
                         const PlannerConfig& cfg, std::uint64_t seed,
                         const DemonstratorParams& params) {
  return run_episode(model, scenario, sim, cfg, seed, EgoMode::scripted, params);
}

std::string episode_trace_json(const Episode& episode, const std::string& provenance_json) {
  using nlohmann::json;
  json doc;
  doc["format_version"] = 1;
  doc["provenance"] = json::parse(provenance_json);
  doc["scenario_id"] = episode.scenario_id;
  doc["progress"] = episode.progress;
  doc["collided"] = episode.collided;
  doc["goal_reached"] = episode.goal_reached;
  doc["mean_abs_accel"] = episode.mean_abs_accel();
  json steps = json::array();
  for (std::size_t k = 0; k < episode.steps.size(); ++k) {
    const EpisodeStep& s = episode.steps[k];
    json agents = json::array();
    for (const Trajectory& tr : episode.states) {
      const AgentState& a = tr[k + 1];
      agents.push_back({a.agent_id, a.x, a.y, a.heading, a.speed});
    }
    steps.push_back({{"t", s.time},
                     {"ego_token", s.ego_token},
                     {"selected", s.selected},
                     {"scores", s.scores},
                     {"ego_accel", episode.ego_accel[k]},
                     {"ego_collided", episode.ego_collided[k + 1] != 0},
                     {"agents", std::move(agents)}});
  }
  doc["steps"] = std::move(steps);
  return doc.dump() + "\n";
}

}  // namespace grbo
