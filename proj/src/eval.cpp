#include "grbo/eval.hpp"

#include "grbo/parallel.hpp"
#include "grbo/scenario_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace grbo {

using nlohmann::json;

namespace {

/// Closing speed between the pair at the rollout's smallest separation margin.
double closing_speed_at_min_gap(const Rollout& r) {
  double best = std::numeric_limits<double>::infinity();
  double closing = 0.0;
  const std::size_t n = r.num_agents();
  for (std::size_t t = 1; t < r.states.front().size(); ++t)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        const AgentState& sa = r.states[a][t];
        const AgentState& sb = r.states[b][t];
        const double gap = separation_margin(sa, sb);
        if (gap < best) {
          best = gap;
          const Vec2 dp = sb.position() - sa.position();
          const double dist = dp.norm();
          closing = dist > 0.0 ? -dp.dot(sb.velocity() - sa.velocity()) / dist : 0.0;
        }
      }
  return closing;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

OpenLoopResult evaluate_open_loop(const PolicyModel& model, const std::vector<Scenario>& scenarios,
                                  const SimConfig& sim, int rollouts_per_scenario, int k,
                                  std::uint64_t seed) {
  if (scenarios.empty()) throw std::invalid_argument("collision rate needs at least one scenario");
  if (rollouts_per_scenario < 1) throw std::invalid_argument("rollouts per scenario must be >= 1");
  OpenLoopResult out;
  out.per_scenario.resize(scenarios.size());
  parallel_for(scenarios.size(), [&](std::size_t s) {
    const Scenario& sc = scenarios[s];
    const FeatureContext ctx(sc, sim, model.features);
    Rng rng = make_rng(seed, {0xe7a1, scenario_key(sc)});
    RolloutOptions options;
    options.steps = sc.horizon;
    options.record_features = false;
    options.record_entropy = false;
    const TokenChooser chooser = top_k_chooser(k);
    const SceneState start = initial_scene(sc);
    ScenarioCollisions& stats = out.per_scenario[s];
    stats.scenario_id = sc.scenario_id;
    double closing = 0.0;
    for (int r = 0; r < rollouts_per_scenario; ++r) {
      Rng stream(rng());
      const Rollout ro = simulate(model, ctx, start, options, chooser, stream);
      for (std::size_t i = 0; i < ro.num_agents(); ++i) stats.collided += ro.agent_collided(i);
      stats.agent_rollouts += static_cast<long>(ro.num_agents());
      closing += closing_speed_at_min_gap(ro);
    }
    stats.closing_speed = closing / rollouts_per_scenario;
  });
  for (const ScenarioCollisions& s : out.per_scenario) {
    out.collided += s.collided;
    out.agent_rollouts += s.agent_rollouts;
  }
  return out;
}

double collision_rate(const PolicyModel& model, const std::vector<Scenario>& scenarios,
                      const SimConfig& sim, int rollouts_per_scenario, int k, std::uint64_t seed) {
  return evaluate_open_loop(model, scenarios, sim, rollouts_per_scenario, k, seed).rate();
}

CriticalSplit safety_critical_split(const PolicyModel& baseline, const std::vector<Scenario>& scenarios,
                                    const SimConfig& sim, double fraction, int rollouts, int k,
                                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("critical fraction must be in (0, 1]");
  CriticalSplit split;
  split.stats = evaluate_open_loop(baseline, scenarios, sim, rollouts, k, seed).per_scenario;
  std::vector<std::size_t> order(scenarios.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ScenarioCollisions& x = split.stats[a];
    const ScenarioCollisions& y = split.stats[b];
    // Compare rates by cross-multiplying the integer counts.
    const long lhs = x.collided * y.agent_rollouts;
    const long rhs = y.collided * x.agent_rollouts;
    if (lhs != rhs) return lhs > rhs;
    if (x.closing_speed != y.closing_speed) return x.closing_speed > y.closing_speed;
    return x.scenario_id < y.scenario_id;
  });
  const auto count = static_cast<std::size_t>(
      std::ceil(static_cast<double>(scenarios.size()) * fraction - 1e-9));
  const std::size_t keep = std::clamp<std::size_t>(count, 1, scenarios.size());
  split.critical.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::vector<bool> is_critical(scenarios.size(), false);
  for (std::size_t c : split.critical) is_critical[c] = true;
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    if (!is_critical[s]) split.rest.push_back(s);
  return split;
}

ClosedLoopSummary closed_loop_metrics(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("closed-loop metrics need an episode");
  std::vector<double> progress;
  std::vector<double> accel;
  double collided = 0.0;
  for (const Episode& e : episodes) {
    progress.push_back(e.progress);
    accel.push_back(e.mean_abs_accel());
    collided += e.collided ? 1.0 : 0.0;
  }
  return {mean_of(progress), sample_std(progress), mean_of(accel), sample_std(accel),
          collided / static_cast<double>(episodes.size()), episodes.size()};
}

std::vector<Episode> run_closed_loop_batch(const PolicyModel& model,
                                           const std::vector<Scenario>& scenarios,
                                           const SimConfig& sim, const PlannerConfig& cfg,
                                           std::uint64_t seed) {
  std::vector<Episode> out(scenarios.size());
  parallel_for(scenarios.size(),
               [&](std::size_t s) { out[s] = run_closed_loop(model, scenarios[s], sim, cfg, seed); });
  return out;
}

TrainingCurves training_curves(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  int line_no = 0;
  const std::string header =
      "iter,epoch,mean_reward,collision_rate,norm_entropy,mean_kl,objective,grad_norm";
  if (!std::getline(in, line) || line != header)
    throw FormatError("training log line 1: unexpected header");
  ++line_no;
  TrainingCurves c;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError("training log line " + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
    }
    if (v.size() != 8)
      throw FormatError("training log line " + std::to_string(line_no) + ": expected 8 columns");
    c.iter.push_back(static_cast<int>(v[0]));
    c.collision_rate.push_back(v[3]);
    c.norm_entropy.push_back(v[4]);
    c.mean_kl.push_back(v[5]);
    c.grad_norm.push_back(v[7]);
  }
  if (c.iter.empty()) throw FormatError("training log has no rows");
  return c;
}

long EvalReport::collided() const {
  long s = 0;
  for (const auto& r : scenarios) s += r.collided;
  return s;
}

long EvalReport::agent_rollouts() const {
  long s = 0;
  for (const auto& r : scenarios) s += r.agent_rollouts;
  return s;
}

double EvalReport::collision_rate() const {
  const long n = agent_rollouts();
  return n ? static_cast<double>(collided()) / static_cast<double>(n) : 0.0;
}

std::optional<ClosedLoopSummary> EvalReport::closed_loop() const {
  if (mode != "closed" || scenarios.empty()) return std::nullopt;
  std::vector<double> progress;
  std::vector<double> accel;
  for (const auto& r : scenarios) {
    progress.push_back(r.progress.value_or(0.0));
    accel.push_back(r.mean_abs_accel.value_or(0.0));
  }
  return ClosedLoopSummary{mean_of(progress), sample_std(progress), mean_of(accel),
                           sample_std(accel), collision_rate(), scenarios.size()};
}

EvalReport open_loop_report(const OpenLoopResult& result, const std::vector<Scenario>& scenarios) {
  EvalReport rep;
  rep.mode = "open";
  rep.sampling = "topk";
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const ScenarioCollisions& c = result.per_scenario[s];
    rep.scenarios.push_back(ScenarioReportRow{c.scenario_id, std::string(to_string(scenarios[s].family)), c.collided,
                             c.agent_rollouts, std::nullopt, std::nullopt});
  }
  return rep;
}

EvalReport closed_loop_report(const std::vector<Episode>& episodes,
                              const std::vector<Scenario>& scenarios) {
  EvalReport rep;
  rep.mode = "closed";
  for (std::size_t s = 0; s < episodes.size(); ++s) {
    const Episode& e = episodes[s];
    rep.scenarios.push_back(ScenarioReportRow{e.scenario_id, std::string(to_string(scenarios[s].family)),
                                               e.collided ? 1L : 0L, 1L,
                             e.progress, e.mean_abs_accel()});
  }
  return rep;
}

std::string report_json(const EvalReport& report) {
  json doc;
  doc["format_version"] = 1;
  doc["provenance"] = json::parse(report.provenance_json);
  doc["mode"] = report.mode;
  doc["sampling"] = report.sampling;
  doc["model_checksum"] = hex64(report.model_checksum);
  json agg = {{"collided", report.collided()},
              {"agent_rollouts", report.agent_rollouts()},
              {"collision_rate", report.collision_rate()}};
  if (const auto cl = report.closed_loop()) {
    agg["mean_progress"] = cl->mean_progress;
    agg["std_progress"] = cl->std_progress;
    agg["mean_abs_accel"] = cl->mean_accel;
    agg["std_abs_accel"] = cl->std_accel;
  }
  doc["aggregate"] = agg;
  json rows = json::array();
  for (const auto& r : report.scenarios) {
    json row = {{"scenario_id", r.scenario_id},
                {"family", r.family},
                {"collided", r.collided},
                {"agent_rollouts", r.agent_rollouts}};
    if (r.progress) row["progress"] = *r.progress;
    if (r.mean_abs_accel) row["mean_abs_accel"] = *r.mean_abs_accel;
    rows.push_back(std::move(row));
  }
  doc["scenarios"] = std::move(rows);
  return doc.dump(1) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(9);
  os << "scenario_id,family,collided,agent_rollouts,collision_rate,progress,mean_abs_accel\n";
  for (const auto& r : report.scenarios) {
    os << r.scenario_id << ',' << r.family << ',' << r.collided << ',' << r.agent_rollouts << ','
       << (r.agent_rollouts ? static_cast<double>(r.collided) / static_cast<double>(r.agent_rollouts) : 0.0)
       << ',';
    if (r.progress) os << *r.progress;
    os << ',';
    if (r.mean_abs_accel) os << *r.mean_abs_accel;
    os << '\n';
  }
  return os.str();
}

EvalReport parse_report(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version") != 1) throw FormatError("unsupported report format_version");
    EvalReport rep;
    rep.mode = doc.at("mode").get<std::string>();
    rep.sampling = doc.at("sampling").get<std::string>();
    rep.model_checksum = std::stoull(doc.at("model_checksum").get<std::string>(), nullptr, 16);
    rep.provenance_json = doc.at("provenance").dump();
    for (const json& r : doc.at("scenarios")) {
      ScenarioReportRow row;
      row.scenario_id = r.at("scenario_id").get<std::string>();
      row.family = r.at("family").get<std::string>();
      row.collided = r.at("collided").get<long>();
      row.agent_rollouts = r.at("agent_rollouts").get<long>();
      if (r.contains("progress")) row.progress = r.at("progress").get<double>();
      if (r.contains("mean_abs_accel")) row.mean_abs_accel = r.at("mean_abs_accel").get<double>();
      if (row.collided < 0 || row.collided > row.agent_rollouts)
        throw FormatError("report row has inconsistent counts");
      rep.scenarios.push_back(std::move(row));
    }
    return rep;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::optional<double> relative_delta(double base, double value) {
  if (!(base > 0.0)) return std::nullopt;
  return (value - base) / base;
}

std::string compare_reports(const EvalReport& base, const EvalReport& candidate,
                            const std::string& provenance_json) {
  std::vector<std::pair<std::string, std::pair<double, double>>> metrics = {
      {"collision_rate", {base.collision_rate(), candidate.collision_rate()}}};
  const auto b = base.closed_loop();
  const auto c = candidate.closed_loop();
  if (b && c) {
    metrics.push_back({"mean_progress", {b->mean_progress, c->mean_progress}});
    metrics.push_back({"mean_abs_accel", {b->mean_accel, c->mean_accel}});
  }
  json doc;
  doc["format_version"] = 1;
  doc["provenance"] = json::parse(provenance_json);
  doc["base_checksum"] = hex64(base.model_checksum);
  doc["new_checksum"] = hex64(candidate.model_checksum);
  json rows = json::array();
  for (const auto& [name, values] : metrics) {
    const auto d = relative_delta(values.first, values.second);
    json row = {{"metric", name}, {"base", values.first}, {"new", values.second}};
    if (d) {
      row["delta"] = *d;
      row["delta_percent"] = *d * 100.0;
    } else {
      row["delta"] = nullptr;
      row["delta_percent"] = nullptr;
      row["note"] = "undefined: base is zero";
    }
    rows.push_back(std::move(row));
  }
  doc["metrics"] = std::move(rows);
  return doc.dump(1) + "\n";
}

}  // namespace grbo
