// grbo_lab: scenario generation, pretraining, post-training, evaluation and planning from the shell.

#include "grbo/checkpoint.hpp"
#include "grbo/eval.hpp"
#include "grbo/grbo.hpp"
#include "grbo/parallel.hpp"
#include "grbo/pretrain.hpp"
#include "grbo/scenario_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grbo;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kVersionError = 4, kNumericError = 5 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Everything a command may read from a config file. Flags given on the command line win.
struct RunConfig {
  std::uint64_t seed = 0;
  SimConfig sim;
  PretrainConfig pretrain;
  TrainConfig train;
  PlannerConfig planner;
  int eval_rollouts = 4;
  int eval_top_k = 5;
};

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_config_file(const fs::path& path, RunConfig& rc) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text_file(path));
    take(j, "seed", rc.seed);
    if (j.contains("sim")) {
      const json& s = j["sim"];
      take(s, "dt", rc.sim.dt);
      take(s, "horizon", rc.sim.horizon);
      take(s, "v_max", rc.sim.v_max);
      take(s, "history_steps", rc.sim.history_steps);
      take(s, "allow_reverse", rc.sim.allow_reverse);
    }
    if (j.contains("pretrain")) {
      const json& p = j["pretrain"];
      take(p, "epochs", rc.pretrain.epochs);
      take(p, "batch_size", rc.pretrain.batch_size);
      take(p, "learning_rate", rc.pretrain.learning_rate);
      take(p, "hidden", rc.pretrain.hidden);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      if (t.value("preset", std::string()) == "full") rc.train = TrainConfig::full_scale();
      take(t, "group_size", rc.train.group_size);
      take(t, "beta", rc.train.beta);
      take(t, "clip_low", rc.train.clip_low);
      take(t, "clip_high", rc.train.clip_high);
      take(t, "warm_k_steps", rc.train.warm_k_steps);
      take(t, "batch_size", rc.train.batch_size);
      take(t, "epochs", rc.train.epochs);
      take(t, "top_k", rc.train.top_k);
      take(t, "rl_fraction", rc.train.rl_fraction);
      take(t, "inner_updates", rc.train.inner_updates);
      take(t, "learning_rate", rc.train.learning_rate);
      take(t, "reinforce_kl", rc.train.reinforce_kl);
    }
    if (j.contains("planner")) {
      const json& p = j["planner"];
      take(p, "rollouts", rc.planner.rollouts);
      take(p, "warm_rollouts", rc.planner.warm_rollouts);
      take(p, "warm_steps", rc.planner.warm_steps);
      take(p, "top_k", rc.planner.top_k);
      take(p, "w_collision", rc.planner.w_collision);
      take(p, "w_accel", rc.planner.w_accel);
      take(p, "plan_horizon", rc.planner.plan_horizon);
      take(p, "lambda_heading", rc.planner.lambda_heading);
      take(p, "lambda_speed", rc.planner.lambda_speed);
      take(p, "replan_period", rc.planner.replan_period);
    }
    if (j.contains("eval")) {
      take(j["eval"], "rollouts", rc.eval_rollouts);
      take(j["eval"], "top_k", rc.eval_top_k);
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path.string() + ": " + e.what());
  }
}

json config_json(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  const PlannerConfig& p = rc.planner;
  return {{"seed", rc.seed},
          {"sim",
           {{"dt", rc.sim.dt},
            {"horizon", rc.sim.horizon},
            {"v_max", rc.sim.v_max},
            {"history_steps", rc.sim.history_steps},
            {"allow_reverse", rc.sim.allow_reverse}}},
          {"pretrain",
           {{"epochs", rc.pretrain.epochs},
            {"batch_size", rc.pretrain.batch_size},
            {"learning_rate", rc.pretrain.learning_rate},
            {"hidden", rc.pretrain.hidden}}},
          {"train",
           {{"group_size", t.group_size},
            {"beta", t.beta},
            {"clip_low", t.clip_low},
            {"clip_high", t.clip_high},
            {"warm_k_steps", t.warm_k_steps},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"top_k", t.top_k},
            {"rl_fraction", t.rl_fraction},
            {"inner_updates", t.inner_updates},
            {"learning_rate", t.learning_rate},
            {"reinforce_kl", t.reinforce_kl}}},
          {"planner",
           {{"rollouts", p.rollouts},
            {"warm_rollouts", p.warm_rollouts},
            {"warm_steps", p.warm_steps},
            {"top_k", p.top_k},
            {"w_collision", p.w_collision},
            {"w_accel", p.w_accel},
            {"plan_horizon", p.plan_horizon},
            {"lambda_heading", p.lambda_heading},
            {"lambda_speed", p.lambda_speed},
            {"replan_period", p.replan_period}}},
          {"eval", {{"rollouts", rc.eval_rollouts}, {"top_k", rc.eval_top_k}}}};
}

/// Producing command without --threads, so artifacts do not depend on worker count.
std::string command_string(int argc, char** argv) {
  std::string out = "grbo_lab";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--threads") {
      ++i;
      continue;
    }
    if (a.rfind("--threads=", 0) == 0) continue;
    out += ' ';
    out += a;
  }
  return out;
}

std::string provenance(const std::string& command, const RunConfig& rc) {
  const std::string cfg = config_json(rc).dump();
  return json{{"format_version", 1},
              {"command", command},
              {"seed", rc.seed},
              {"config_hash", hex64(fnv1a(cfg))},
              {"config", json::parse(cfg)}}
      .dump();
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

fs::path epoch_path(const fs::path& out, int epoch) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + ".epoch" + std::to_string(epoch) + out.extension().string());
  return p;
}

std::vector<FamilyMix> default_mix() {
  return {{ScenarioFamily::crossing, 0.35},
          {ScenarioFamily::unprotected_right_turn, 0.35},
          {ScenarioFamily::straight, 0.15},
          {ScenarioFamily::merge, 0.15}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-token policy lab: imitation pretraining, group-relative post-training, "
               "closed-loop planning"};
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig rc;
  std::string config_path;
  int threads = 0;
  std::uint64_t seed = 0;
  app.add_option("--threads", threads, "Worker threads (default: GRBO_LAB_THREADS or 1)");
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  auto* seed_opt = app.add_option("--seed", seed, "Base seed");

  // gen-scenarios
  auto* gen = app.add_subcommand("gen-scenarios", "Generate a seeded scenario corpus");
  std::string family = "mix";
  int count = 20;
  std::string out_path;
  double inattentive = 0.15;
  gen->add_option("--family", family, "straight | right_turn | crossing | merge | mix")->capture_default_str();
  gen->add_option("--count", count)->capture_default_str();
  gen->add_option("--out", out_path)->required();
  gen->add_option("--inattentive-fraction", inattentive)->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Imitation pretraining by next-token prediction");
  std::string scenarios_path, ckpt_out, log_path;
  std::optional<int> pre_epochs, pre_batch, pre_hidden;
  std::optional<double> pre_lr;
  pre->add_option("--scenarios", scenarios_path)->required();
  pre->add_option("--epochs", pre_epochs);
  pre->add_option("--batch-size", pre_batch);
  pre->add_option("--lr", pre_lr);
  pre->add_option("--hidden", pre_hidden);
  pre->add_option("--out-checkpoint", ckpt_out)->required();
  pre->add_option("--log", log_path, "Loss curve CSV");

  // posttrain
  auto* post = app.add_subcommand("posttrain", "RL post-training with GRBO or REINFORCE");
  std::string ckpt_in, method = "grbo";
  std::optional<int> tr_epochs, tr_batch, tr_group, tr_topk, tr_inner;
  std::optional<double> tr_lr, tr_beta, tr_frac;
  bool tr_rkl = false;
  post->add_option("--checkpoint", ckpt_in)->required();
  post->add_option("--scenarios", scenarios_path)->required();
  post->add_option("--method", method)->check(CLI::IsMember({"grbo", "reinforce"}))->capture_default_str();
  post->add_option("--out-checkpoint", ckpt_out)->required();
  post->add_option("--log", log_path, "Training log CSV");
  post->add_option("--epochs", tr_epochs);
  post->add_option("--batch-size", tr_batch);
  post->add_option("--group-size", tr_group);
  post->add_option("--top-k", tr_topk);
  post->add_option("--inner-updates", tr_inner);
  post->add_option("--lr", tr_lr);
  post->add_option("--beta", tr_beta);
  post->add_option("--rl-fraction", tr_frac);
  post->add_flag("--reinforce-kl", tr_rkl, "Keep the beta-KL term for REINFORCE");

  // eval
  auto* ev = app.add_subcommand("eval", "Open- or closed-loop evaluation report");
  std::string mode = "open", sampling = "topk", report_out, csv_out;
  std::optional<int> ev_rollouts, ev_topk;
  ev->add_option("--checkpoint", ckpt_in)->required();
  ev->add_option("--scenarios", scenarios_path)->required();
  ev->add_option("--mode", mode)->check(CLI::IsMember({"open", "closed"}))->capture_default_str();
  ev->add_option("--sampling", sampling)->check(CLI::IsMember({"topk", "warmk-hybrid"}))->capture_default_str();
  ev->add_option("--out-report", report_out)->required();
  ev->add_option("--csv", csv_out, "Flat per-scenario CSV");
  ev->add_option("--rollouts", ev_rollouts, "Open-loop rollouts per scenario");
  ev->add_option("--top-k", ev_topk);

  // rollout
  auto* ro = app.add_subcommand("rollout", "Closed-loop episode trace for one scenario");
  std::string scenario_id, trace_out;
  int scenario_index = 0;
  ro->add_option("--checkpoint", ckpt_in)->required();
  ro->add_option("--scenario", scenarios_path, "Scenario file")->required();
  ro->add_option("--scenario-id", scenario_id, "Pick by id (default: --index)");
  ro->add_option("--index", scenario_index)->capture_default_str();
  ro->add_option("--sampling", sampling)->check(CLI::IsMember({"topk", "warmk-hybrid"}))->capture_default_str();
  ro->add_option("--trace-out", trace_out)->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "Relative deltas between two eval reports");
  std::string base_report, new_report;
  cmp->add_option("--base-report", base_report)->required();
  cmp->add_option("--new-report", new_report)->required();
  cmp->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "grbo_lab: error[config]: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (threads <= 0) {
      if (const char* env = std::getenv("GRBO_LAB_THREADS")) {
        try {
          threads = std::stoi(env);
        } catch (const std::exception&) {
          throw ConfigError(std::string("GRBO_LAB_THREADS is not an integer: ") + env);
        }
      }
    }
    set_thread_count(std::max(1, threads));
    if (!config_path.empty()) apply_config_file(config_path, rc);
    if (seed_opt->count()) rc.seed = seed;
    const std::string command = command_string(argc, argv);

    if (*gen) {
      GeneratorConfig gc;
      gc.inattentive_fraction = inattentive;
      std::vector<Scenario> scenarios;
      try {
        scenarios = family == "mix" ? generate_corpus(default_mix(), count, rc.seed, rc.sim, gc)
                                    : generate_scenarios(family_from_string(family), count, rc.seed,
                                                         rc.sim, gc);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      write_scenarios(out_path, scenarios, provenance(command, rc));
      std::cout << "wrote " << scenarios.size() << " scenarios to " << out_path << "\n";
      return kOk;
    }

    if (*pre) {
      require_file(scenarios_path, "scenario file");
      if (pre_epochs) rc.pretrain.epochs = *pre_epochs;
      if (pre_batch) rc.pretrain.batch_size = *pre_batch;
      if (pre_lr) rc.pretrain.learning_rate = *pre_lr;
      if (pre_hidden) rc.pretrain.hidden = *pre_hidden;
      rc.pretrain.seed = rc.seed;
      const std::vector<Scenario> scenarios = read_scenarios(scenarios_path);
      std::ostringstream csv;
      csv.precision(9);
      csv << "epoch,mean_loss,token_accuracy\n";
      PretrainResult r;
      try {
        r = pretrain(scenarios, rc.sim, rc.pretrain, {}, {}, [&](const PretrainEpoch& e) {
          csv << e.epoch << ',' << e.mean_loss << ',' << e.token_accuracy << '\n';
          if (!std::isfinite(e.mean_loss)) throw NumericError("pretraining loss is not finite");
        });
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const std::string prov = provenance(command, rc);
      save_checkpoint(ckpt_out, Checkpoint{r.model, r.optimizer, prov});
      if (!log_path.empty()) write_text_file(log_path, csv.str());
      std::cout << "pretrained " << r.log.size() << " epochs; checkpoint " << ckpt_out << "\n";
      return kOk;
    }

    if (*post) {
      require_file(ckpt_in, "checkpoint");
      require_file(scenarios_path, "scenario file");
      if (tr_epochs) rc.train.epochs = *tr_epochs;
      if (tr_batch) rc.train.batch_size = *tr_batch;
      if (tr_group) rc.train.group_size = *tr_group;
      if (tr_topk) rc.train.top_k = *tr_topk;
      if (tr_inner) rc.train.inner_updates = *tr_inner;
      if (tr_lr) rc.train.learning_rate = *tr_lr;
      if (tr_beta) rc.train.beta = *tr_beta;
      if (tr_frac) rc.train.rl_fraction = *tr_frac;
      if (tr_rkl) rc.train.reinforce_kl = true;
      rc.train.seed = rc.seed;
      const Checkpoint init = load_checkpoint(ckpt_in);
      try {
        rc.train.validate(init.model.vocab_size());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const std::vector<Scenario> scenarios = read_scenarios(scenarios_path);
      const std::string prov = provenance(command, rc);
      const EpochCallback on_epoch = [&](int epoch, const PolicyModel& m, const OptimizerState& o) {
        if (!m.params.all_finite()) throw NumericError("parameters became non-finite");
        save_checkpoint(epoch_path(ckpt_out, epoch), Checkpoint{m, o, prov});
      };
      TrainResult r;
      try {
        r = method == "grbo" ? grbo_train(init.model, scenarios, rc.sim, rc.train, on_epoch)
                             : reinforce_train(init.model, scenarios, rc.sim, rc.train, on_epoch);
      } catch (const std::runtime_error& e) {
        if (dynamic_cast<const FormatError*>(&e)) throw;
        throw NumericError(e.what());
      }
      save_checkpoint(ckpt_out, Checkpoint{r.model, r.optimizer, prov});
      if (!log_path.empty()) write_text_file(log_path, train_log_csv(r.log));
      std::cout << method << ": " << r.log.size() << " updates; checkpoint " << ckpt_out << "\n";
      return kOk;
    }

    if (*ev) {
      require_file(ckpt_in, "checkpoint");
      require_file(scenarios_path, "scenario file");
      if (ev_rollouts) rc.eval_rollouts = *ev_rollouts;
      if (ev_topk) {
        rc.eval_top_k = *ev_topk;
        rc.planner.top_k = *ev_topk;
      }
      if (sampling == "topk") rc.planner.warm_rollouts = 0;
      const Checkpoint ck = load_checkpoint(ckpt_in);
      const std::vector<Scenario> scenarios = read_scenarios(scenarios_path);
      EvalReport rep;
      try {
        if (mode == "open") {
          rep = open_loop_report(evaluate_open_loop(ck.model, scenarios, rc.sim, rc.eval_rollouts,
                                                    rc.eval_top_k, rc.seed),
                                 scenarios);
        } else {
          rc.planner.validate(ck.model.vocab_size());
          rep = closed_loop_report(run_closed_loop_batch(ck.model, scenarios, rc.sim, rc.planner, rc.seed),
                                   scenarios);
        }
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      rep.sampling = sampling;
      rep.model_checksum = ck.model.checksum();
      rep.provenance_json = provenance(command, rc);
      write_text_file(report_out, report_json(rep));
      if (!csv_out.empty()) write_text_file(csv_out, report_csv(rep));
      std::cout << mode << "-loop collision rate " << rep.collision_rate() << " ("
                << rep.collided() << "/" << rep.agent_rollouts() << ")\n";
      return kOk;
    }

    if (*ro) {
      require_file(ckpt_in, "checkpoint");
      require_file(scenarios_path, "scenario file");
      if (sampling == "topk") rc.planner.warm_rollouts = 0;
      const Checkpoint ck = load_checkpoint(ckpt_in);
      const std::vector<Scenario> scenarios = read_scenarios(scenarios_path);
      const Scenario* chosen = nullptr;
      if (!scenario_id.empty()) {
        for (const Scenario& s : scenarios)
          if (s.scenario_id == scenario_id) chosen = &s;
        if (!chosen) throw ConfigError("no scenario with id " + scenario_id);
      } else {
        if (scenario_index < 0 || scenario_index >= static_cast<int>(scenarios.size()))
          throw ConfigError("--index outside the scenario file");
        chosen = &scenarios[static_cast<std::size_t>(scenario_index)];
      }
      Episode ep;
      try {
        ep = run_closed_loop(ck.model, *chosen, rc.sim, rc.planner, rc.seed);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      write_text_file(trace_out, episode_trace_json(ep, provenance(command, rc)));
      std::cout << chosen->scenario_id << ": progress " << ep.progress
                << (ep.collided ? " (ego collided)" : "") << "\n";
      return kOk;
    }

    if (*cmp) {
      require_file(base_report, "base report");
      require_file(new_report, "new report");
      const EvalReport b = parse_report(read_text_file(base_report));
      const EvalReport n = parse_report(read_text_file(new_report));
      write_text_file(out_path, compare_reports(b, n, provenance(command, rc)));
      std::cout << "collision rate " << b.collision_rate() << " -> " << n.collision_rate() << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "grbo_lab: error[config]: " << e.what() << "\n";
    return kConfigError;
  } catch (const CheckpointVersionError& e) {
    std::cerr << "grbo_lab: error[checkpoint-version]: " << e.what() << "\n";
    return kVersionError;
  } catch (const FormatError& e) {
    std::cerr << "grbo_lab: error[data-format]: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    std::cerr << "grbo_lab: error[numeric]: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "grbo_lab: error[config]: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "grbo_lab: error[numeric]: " << e.what() << "\n";
    return kNumericError;
  }
  return kOk;
}
