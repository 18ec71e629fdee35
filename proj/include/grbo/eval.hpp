#pragma once

#include "grbo/planner.hpp"
#include "grbo/rollout.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace grbo {

struct ScenarioCollisions {
  std::string scenario_id;
  long collided = 0;         // agent-rollouts with at least one collision
  long agent_rollouts = 0;
  double closing_speed = 0.0;  // mean over rollouts, at each rollout's minimum pairwise gap

  double rate() const {
    return agent_rollouts ? static_cast<double>(collided) / static_cast<double>(agent_rollouts) : 0.0;
  }
};

struct OpenLoopResult {
  long collided = 0;
  long agent_rollouts = 0;
  std::vector<ScenarioCollisions> per_scenario;  // input order

  double rate() const {
    return agent_rollouts ? static_cast<double>(collided) / static_cast<double>(agent_rollouts) : 0.0;
  }
};

/// Open-loop Top-K rollouts of every agent. Each scenario draws from a stream keyed by (seed,
/// scenario_id), so the result does not depend on corpus order or thread count.
OpenLoopResult evaluate_open_loop(const PolicyModel& model, const std::vector<Scenario>& scenarios,
                                  const SimConfig& sim, int rollouts_per_scenario, int k,
                                  std::uint64_t seed);

/// Fraction of (scenario, rollout, agent) triples whose rollout contains a collision.
double collision_rate(const PolicyModel& model, const std::vector<Scenario>& scenarios,
                      const SimConfig& sim, int rollouts_per_scenario, int k, std::uint64_t seed);

struct CriticalSplit {
  std::vector<std::size_t> critical;  // most collision-prone first
  std::vector<std::size_t> rest;      // input order
  std::vector<ScenarioCollisions> stats;
};

/// Ranks scenarios by empirical collision probability under `baseline`; ties go to the higher mean
/// closing speed at minimum gap, then to the smaller scenario_id. The top ceil(fraction * n) are
/// critical.
CriticalSplit safety_critical_split(const PolicyModel& baseline, const std::vector<Scenario>& scenarios,
                                    const SimConfig& sim, double fraction, int rollouts, int k,
                                    std::uint64_t seed);

struct ClosedLoopSummary {
  double mean_progress = 0.0;
  double std_progress = 0.0;
  double mean_accel = 0.0;
  double std_accel = 0.0;
  double collision_rate = 0.0;  // fraction of episodes ending in an ego collision
  std::size_t episodes = 0;
};

/// Sample means and standard deviations (n - 1 denominator, 0 for a single episode).
ClosedLoopSummary closed_loop_metrics(const std::vector<Episode>& episodes);

/// One closed-loop episode per scenario, run in parallel.
std::vector<Episode> run_closed_loop_batch(const PolicyModel& model,
                                           const std::vector<Scenario>& scenarios,
                                           const SimConfig& sim, const PlannerConfig& cfg,
                                           std::uint64_t seed);

struct TrainingCurves {
  std::vector<int> iter;
  std::vector<double> norm_entropy;
  std::vector<double> mean_kl;
  std::vector<double> collision_rate;
  std::vector<double> grad_norm;
};

/// Parses a training log CSV. Throws FormatError naming the offending line.
TrainingCurves training_curves(const std::string& csv);

struct ScenarioReportRow {
  std::string scenario_id;
  std::string family;
  long collided = 0;
  long agent_rollouts = 0;
  std::optional<double> progress;
  std::optional<double> mean_abs_accel;
};

struct EvalReport {
  std::string mode;      // "open" or "closed"
  std::string sampling;  // "topk" or "warmk-hybrid"
  std::uint64_t model_checksum = 0;
  std::string provenance_json = "{}";
  std::vector<ScenarioReportRow> scenarios;

  long collided() const;
  long agent_rollouts() const;
  double collision_rate() const;
  /// Closed-loop aggregates; nullopt for open-loop reports.
  std::optional<ClosedLoopSummary> closed_loop() const;
};

EvalReport open_loop_report(const OpenLoopResult& result, const std::vector<Scenario>& scenarios);
EvalReport closed_loop_report(const std::vector<Episode>& episodes,
                              const std::vector<Scenario>& scenarios);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
EvalReport parse_report(const std::string& json_text);

/// Relative change (new - base) / base; nullopt when base is not positive.
std::optional<double> relative_delta(double base, double value);

/// Delta table over the aggregate metrics of two reports, as JSON.
std::string compare_reports(const EvalReport& base, const EvalReport& candidate,
                            const std::string& provenance_json);

}  // namespace grbo
