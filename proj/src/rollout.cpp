#include "grbo/rollout.hpp"

#include <algorithm>

namespace grbo {

std::vector<AgentState> SceneState::current() const {
  std::vector<AgentState> out;
  out.reserve(recent.size());
  for (const Trajectory& h : recent) out.push_back(h.back());
  return out;
}

void SceneState::advance(const std::vector<AgentState>& next, std::size_t keep) {
  for (std::size_t i = 0; i < recent.size(); ++i) {
    recent[i].push_back(next[i]);
    if (recent[i].size() > keep) recent[i].erase(recent[i].begin());
  }
  ++time;
}

SceneState initial_scene(const Scenario& scenario) {
  SceneState s;
  s.recent = scenario.initial_history;
  return s;
}

TokenChooser top_k_chooser(int k) {
  return [k](std::size_t, int, const AgentState&, const Eigen::VectorXd& lp, Rng& rng) {
    return sample_top_k(lp, k, rng);
  };
}

bool Rollout::agent_collided(std::size_t agent) const {
  const auto& c = collided[agent];
  return std::any_of(c.begin(), c.end(), [](std::uint8_t f) { return f != 0; });
}

int Rollout::first_collision(std::size_t agent) const {
  const auto& c = collided[agent];
  for (std::size_t t = 0; t < c.size(); ++t)
    if (c[t]) return static_cast<int>(t);
  return -1;
}

void mark_collisions(const std::vector<AgentState>& scene, std::vector<std::uint8_t>& flags) {
  flags.assign(scene.size(), 0);
  for (std::size_t a = 0; a < scene.size(); ++a)
    for (std::size_t b = a + 1; b < scene.size(); ++b)
      if (check_collision(scene[a], scene[b])) flags[a] = flags[b] = 1;
}

Rollout simulate(const PolicyModel& model, const FeatureContext& ctx, const SceneState& start,
                 const RolloutOptions& options, const TokenChooser& chooser, Rng& rng) {
  const std::size_t n = start.recent.size();
  const auto steps = static_cast<std::size_t>(options.steps);
  const std::size_t keep = static_cast<std::size_t>(ctx.cfg.command_history) + 1;

  Rollout r;
  r.states.resize(n);
  r.tokens.assign(n, std::vector<int>(steps));
  r.log_probs.assign(n, std::vector<double>(steps));
  r.collided.assign(n, std::vector<std::uint8_t>(steps + 1, 0));
  if (options.record_features)
    r.features.assign(n, Eigen::MatrixXd(ctx.cfg.dim(), static_cast<Eigen::Index>(steps)));

  SceneState scene = start;
  for (std::size_t i = 0; i < n; ++i) {
    if (scene.recent[i].size() > keep)
      scene.recent[i].erase(scene.recent[i].begin(),
                            scene.recent[i].end() - static_cast<std::ptrdiff_t>(keep));
    r.states[i].reserve(steps + 1);
    r.states[i].push_back(scene.recent[i].back());
  }

  std::vector<AgentState> now = scene.current();
  std::vector<AgentState> next(n);
  std::vector<std::uint8_t> flags;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const FeatureVector f = extract_features(ctx, i, scene.recent[i], now);
      const Eigen::VectorXd lp = log_probs(model, f);
      const TokenSample pick = chooser(i, static_cast<int>(t), now[i], lp, rng);
      r.tokens[i][t] = pick.token.index;
      r.log_probs[i][t] = pick.log_prob;
      if (options.record_features) r.features[i].col(static_cast<Eigen::Index>(t)) = f;
      if (options.record_entropy) r.entropy_sum += entropy_normalized(lp);
      next[i] = transition(now[i], detokenize(pick.token, model.vocab), ctx.sim);
    }
    scene.advance(next, keep);
    now = next;
    mark_collisions(now, flags);
    for (std::size_t i = 0; i < n; ++i) {
      r.states[i].push_back(now[i]);
      r.collided[i][t + 1] = flags[i];
    }
  }
  return r;
}

std::uint64_t scenario_key(const Scenario& scenario) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : scenario.scenario_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace grbo
