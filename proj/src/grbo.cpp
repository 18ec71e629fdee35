#include "grbo/grbo.hpp"

#include "grbo/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace grbo {

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.batch_size = 80;
  return c;
}

void TrainConfig::validate(int vocab_size) const {
  if (group_size < 2) throw std::invalid_argument("group size G must be >= 2");
  if (!(clip_low > 0.0 && clip_low < 1.0)) throw std::invalid_argument("clip_low must be in (0, 1)");
  if (!(clip_high > 0.0)) throw std::invalid_argument("clip_high must be > 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (top_k < 1 || top_k > vocab_size) throw std::invalid_argument("top_k must be in [1, |V|]");
  if (batch_size < 1 || epochs < 0 || inner_updates < 1)
    throw std::invalid_argument("batch_size, epochs and inner_updates must be positive");
  if (!(rl_fraction > 0.0 && rl_fraction <= 1.0))
    throw std::invalid_argument("rl_fraction must be in (0, 1]");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
}

RolloutGroup sample_rollout_group(const PolicyModel& model_old, const FeatureContext& ctx, int G,
                                  int K, Rng& rng) {
  RolloutGroup group;
  group.scenario = ctx.scenario;
  group.vocab_size = model_old.vocab_size();
  const SceneState start = initial_scene(*ctx.scenario);
  RolloutOptions options;
  options.steps = ctx.scenario->horizon;
  const TokenChooser chooser = top_k_chooser(K);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(G));
  for (auto& s : seeds) s = rng();
  for (std::uint64_t s : seeds) {
    Rng stream(s);
    group.rollouts.push_back(simulate(model_old, ctx, start, options, chooser, stream));
  }
  group.rewards = compute_rewards(group);
  group.advantages = compute_group_advantages(group.rewards);
  return group;
}

std::vector<std::vector<double>> compute_rewards(const RolloutGroup& group) {
  std::vector<std::vector<double>> out;
  for (const Rollout& r : group.rollouts) {
    std::vector<double> row(r.num_agents());
    for (std::size_t i = 0; i < r.num_agents(); ++i) row[i] = r.agent_collided(i) ? -1.0 : 0.0;
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<double>> compute_group_advantages(
    const std::vector<std::vector<double>>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group advantages need G >= 2");
  const std::size_t n = rewards.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& row : rewards)
    for (std::size_t i = 0; i < n; ++i) mean[i] += row[i];
  for (double& m : mean) m /= static_cast<double>(rewards.size());
  auto out = rewards;
  for (auto& row : out)
    for (std::size_t i = 0; i < n; ++i) row[i] -= mean[i];
  return out;
}

double kl_estimate(double logp_cur, double logp_ref) {
  const double d = logp_ref - logp_cur;
  // expm1 keeps the estimate positive for tiny nonzero d.
  return std::max(0.0, std::expm1(d) - d);
}

ClippedTerm clipped_surrogate(double ratio, double advantage, double clip_low, double clip_high) {
  const double clipped = std::clamp(ratio, 1.0 - clip_low, 1.0 + clip_high);
  const double unclipped_value = ratio * advantage;
  const double clipped_value = clipped * advantage;
  if (unclipped_value <= clipped_value) return {unclipped_value, unclipped_value};
  return {clipped_value, 0.0};
}

namespace {

enum class Surrogate { clipped, plain };

struct GroupTerms {
  ParamSet grad;
  double objective = 0.0;
  double kl_sum = 0.0;
  double clipped = 0.0;
  std::size_t tokens = 0;
};

GroupTerms group_terms(const PolicyModel& model, const PolicyModel& reference,
                       const RolloutGroup& group, const TrainConfig& cfg, Surrogate kind,
                       bool with_kl) {
  GroupTerms out{model.params.zeros_like()};
  const double G = static_cast<double>(group.group_size());
  for (std::size_t j = 0; j < group.rollouts.size(); ++j) {
    const Rollout& r = group.rollouts[j];
    const double N = static_cast<double>(r.num_agents());
    const double T = static_cast<double>(r.steps());
    const double norm = 1.0 / (G * N * T);
    for (std::size_t i = 0; i < r.num_agents(); ++i) {
      const Eigen::MatrixXd& x = r.features[i];
      const BatchForward cur = forward_batch(model, x);
      const BatchForward ref = with_kl ? forward_batch(reference, x) : BatchForward{};
      const double adv = group.advantages[j][i];
      Eigen::MatrixXd dz(cur.log_probs.rows(), x.cols());
      for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const int a = r.tokens[i][static_cast<std::size_t>(t)];
        const double lp = cur.log_probs(a, t);
        const double ratio = std::exp(lp - r.log_probs[i][static_cast<std::size_t>(t)]);
        double value = 0.0;
        double dvalue = 0.0;
        if (kind == Surrogate::clipped) {
          const ClippedTerm term = clipped_surrogate(ratio, adv, cfg.clip_low, cfg.clip_high);
          value = term.value;
          dvalue = term.dvalue_dlogp;
          if (term.value != ratio * adv) out.clipped += 1.0;
        } else {
          value = ratio * adv;
          dvalue = ratio * adv;
        }
        if (with_kl) {
          const double lr = ref.log_probs(a, t);
          const double kl = kl_estimate(lp, lr);
          out.kl_sum += kl;
          value -= cfg.beta * kl;
          dvalue -= cfg.beta * (1.0 - std::exp(lr - lp));
        }
        out.objective += norm * value;
        const double coef = norm * dvalue;
        dz.col(t) = -coef * cur.log_probs.col(t).array().exp().matrix();
        dz(a, t) += coef;
        ++out.tokens;
      }
      accumulate_batch_logit_grad(model, x, cur, dz, out.grad);
    }
  }
  return out;
}

SurrogateResult combine(const PolicyModel& model, const PolicyModel& reference,
                        std::span<const RolloutGroup> groups, const TrainConfig& cfg,
                        Surrogate kind, bool with_kl) {
  if (groups.empty()) throw std::invalid_argument("surrogate needs at least one group");
  for (const RolloutGroup& g : groups) {
    if (g.vocab_size != model.vocab_size() || g.vocab_size != reference.vocab_size())
      throw std::invalid_argument("rollout group was sampled with a different vocabulary");
    if (g.rollouts.empty() || g.rollouts.front().features.empty())
      throw std::invalid_argument("rollout group carries no recorded features");
  }
  std::vector<GroupTerms> parts(groups.size());
  parallel_for(groups.size(), [&](std::size_t g) {
    parts[g] = group_terms(model, reference, groups[g], cfg, kind, with_kl);
  });
  SurrogateResult out{0.0, model.params.zeros_like(), 0.0, 0.0};
  double kl = 0.0;
  double clipped = 0.0;
  std::size_t tokens = 0;
  const double inv = 1.0 / static_cast<double>(groups.size());
  for (GroupTerms& p : parts) {
    out.objective += inv * p.objective;
    out.gradient += inv * p.grad;
    kl += p.kl_sum;
    clipped += p.clipped;
    tokens += p.tokens;
  }
  out.mean_kl = kl / static_cast<double>(tokens);
  out.clip_fraction = clipped / static_cast<double>(tokens);
  return out;
}

}  // namespace

SurrogateResult grbo_surrogate_and_grad(const PolicyModel& model, const PolicyModel& reference,
                                        std::span<const RolloutGroup> groups,
                                        const TrainConfig& cfg) {
  return combine(model, reference, groups, cfg, Surrogate::clipped, true);
}

SurrogateResult reinforce_surrogate_and_grad(const PolicyModel& model, const PolicyModel& reference,
                                             std::span<const RolloutGroup> groups,
                                             const TrainConfig& cfg) {
  return combine(model, reference, groups, cfg, Surrogate::plain, cfg.reinforce_kl);
}

void assign_batch_baseline_advantages(std::span<RolloutGroup> groups) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const RolloutGroup& g : groups)
    for (const auto& row : g.rewards) {
      sum += std::accumulate(row.begin(), row.end(), 0.0);
      count += row.size();
    }
  const double mean = count ? sum / static_cast<double>(count) : 0.0;
  for (RolloutGroup& g : groups) {
    g.advantages = g.rewards;
    for (auto& row : g.advantages)
      for (double& a : row) a -= mean;
  }
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "iter,epoch,mean_reward,collision_rate,norm_entropy,mean_kl,objective,grad_norm\n";
  for (const TrainLogRow& r : rows)
    os << r.iter << ',' << r.epoch << ',' << r.mean_reward << ',' << r.collision_rate << ','
       << r.norm_entropy << ',' << r.mean_kl << ',' << r.objective << ',' << r.grad_norm << '\n';
  return os.str();
}

std::vector<std::size_t> select_rl_subset(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {0x5e1});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const auto keep = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fraction - 1e-9));
  order.resize(std::min(n, std::max<std::size_t>(1, keep)));
  return order;
}

namespace {

/// Entropy and KL of the given policy over every state visited by the groups.
std::pair<double, double> visited_state_stats(const PolicyModel& model, const PolicyModel& reference,
                                              std::span<const RolloutGroup> groups) {
  std::vector<std::array<double, 3>> parts(groups.size());
  parallel_for(groups.size(), [&](std::size_t g) {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    for (const Rollout& r : groups[g].rollouts)
      for (std::size_t i = 0; i < r.num_agents(); ++i) {
        const BatchForward cur = forward_batch(model, r.features[i]);
        const BatchForward ref = forward_batch(reference, r.features[i]);
        for (Eigen::Index t = 0; t < cur.log_probs.cols(); ++t) {
          acc[0] += entropy_normalized(cur.log_probs.col(t));
          const int a = r.tokens[i][static_cast<std::size_t>(t)];
          acc[1] += kl_estimate(cur.log_probs(a, t), ref.log_probs(a, t));
          acc[2] += 1.0;
        }
      }
    parts[g] = acc;
  });
  std::array<double, 3> total{0.0, 0.0, 0.0};
  for (const auto& p : parts)
    for (int k = 0; k < 3; ++k) total[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
  return {total[0] / total[2], total[1] / total[2]};
}

enum class Method { grbo, reinforce };

TrainResult train_loop(const PolicyModel& init, const std::vector<Scenario>& scenarios,
                       const SimConfig& sim, const TrainConfig& cfg, const EpochCallback& on_epoch,
                       Method method) {
  cfg.validate(init.vocab_size());
  if (scenarios.empty()) throw std::invalid_argument("post-training needs scenarios");
  const PolicyModel reference = init;
  TrainResult result{init, OptimizerState::for_model(init, cfg.learning_rate), {},
                     reference.checksum()};
  const std::vector<std::size_t> subset = select_rl_subset(scenarios.size(), cfg.rl_fraction, cfg.seed);
  std::vector<FeatureContext> contexts;
  contexts.reserve(subset.size());
  for (std::size_t s : subset) contexts.emplace_back(scenarios[s], sim, init.features);

  int iter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(subset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(cfg.seed, {0x5b, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle() % i]);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const PolicyModel model_old = result.model;
      std::vector<RolloutGroup> groups(stop - start);
      parallel_for(groups.size(), [&](std::size_t g) {
        const FeatureContext& ctx = contexts[order[start + g]];
        Rng rng = make_rng(cfg.seed, {0x6a, static_cast<std::uint64_t>(epoch),
                                      scenario_key(*ctx.scenario)});
        groups[g] = sample_rollout_group(model_old, ctx, cfg.group_size, cfg.top_k, rng);
      });
      if (method == Method::reinforce) assign_batch_baseline_advantages(groups);

      double reward_sum = 0.0;
      double collided = 0.0;
      double agent_rollouts = 0.0;
      for (const RolloutGroup& g : groups)
        for (const auto& row : g.rewards)
          for (double r : row) {
            reward_sum += r;
            collided += r < 0.0 ? 1.0 : 0.0;
            agent_rollouts += 1.0;
          }

      for (int u = 0; u < cfg.inner_updates; ++u) {
        const SurrogateResult s =
            method == Method::grbo
                ? grbo_surrogate_and_grad(result.model, reference, groups, cfg)
                : reinforce_surrogate_and_grad(result.model, reference, groups, cfg);
        if (!std::isfinite(s.objective) || !s.gradient.all_finite())
          throw std::runtime_error("non-finite surrogate during post-training");
        ParamSet descent = -1.0 * s.gradient;
        adam_step(result.model, descent, result.optimizer);
        const auto [entropy, kl] = visited_state_stats(result.model, reference, groups);
        TrainLogRow row;
        row.iter = iter++;
        row.epoch = epoch;
        row.mean_reward = reward_sum / agent_rollouts;
        row.collision_rate = collided / agent_rollouts;
        row.norm_entropy = entropy;
        row.mean_kl = kl;
        row.objective = s.objective;
        row.grad_norm = std::sqrt(s.gradient.squared_norm());
        result.log.push_back(row);
      }
    }
    if (on_epoch) on_epoch(epoch, result.model, result.optimizer);
  }
  if (reference.checksum() != result.reference_checksum)
    throw std::logic_error("reference policy changed during post-training");
  return result;
}

}  // namespace

TrainResult grbo_train(const PolicyModel& init, const std::vector<Scenario>& scenarios,
                       const SimConfig& sim, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return train_loop(init, scenarios, sim, cfg, on_epoch, Method::grbo);
}

TrainResult reinforce_train(const PolicyModel& init, const std::vector<Scenario>& scenarios,
                            const SimConfig& sim, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  return train_loop(init, scenarios, sim, cfg, on_epoch, Method::reinforce);
}

}  // namespace grbo
