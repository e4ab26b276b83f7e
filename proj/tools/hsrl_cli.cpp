// Command-line front end: train, verify, eval, rollout, export.
//
// Exit codes: 0 success, 1 certification or evaluation failure, 2 bad
// configuration or usage.

#include "hsrl/config.hpp"
#include "hsrl/evaluation.hpp"
#include "hsrl/json_io.hpp"
#include "hsrl/trainer.hpp"
#include "hsrl/verifier.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace hsrl;

constexpr const char* kSchemaHelp = R"(Configuration schema (JSON):
  {
    "env": "pendulum" | "juggler" | "linear",
    "params": { environment parameter overrides },
    "seed": integer,
    "train": { gamma, actor_lr, critic_lr, tau, policy_noise, noise_clip,
               exploration_noise, policy_delay, batch_size, replay_capacity,
               hidden, stage1_epochs, episodes_per_epoch, episode_steps,
               warmup_steps, updates_per_step, stage2_max_epochs, ... },
    "eval": { n_near_constraint, n_near_reset, n_far, horizon, seed },
    "estimation": { grid_per_dim, control_grid, margin_factor, flow_step }
  }
A "linear" env additionally takes "automaton", "constraints",
"jump_constraints" and "buffers" (see README).)";

struct Common {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_checkpoint) {
  cmd->add_option("--config", c.config, "run configuration (JSON)")->required();
  auto* ck = cmd->add_option("--checkpoint", c.checkpoint, "policy checkpoint (JSON)");
  if (needs_checkpoint) ck->required();
  cmd->add_option("--seed", c.seed, "override the configured seed");
  cmd->add_option("--out", c.out, "output path");
}

RunConfig load(const Common& c) {
  nlohmann::json doc = read_json_file(c.config);
  if (c.seed) {
    doc["seed"] = *c.seed;
    if (doc.contains("train")) doc["train"].erase("seed");
    if (doc.contains("eval")) doc["eval"].erase("seed");
  }
  return run_config_from_json(doc);
}

PolicyCheckpoint load_ckpt(const RunConfig& rc, const std::string& path) {
  PolicyCheckpoint ck = load_checkpoint(path, rc.env.buffers);
  if (ck.config_hash != rc.hash) {
    std::cerr << "warning: checkpoint was trained against config " << ck.config_hash
              << ", current config is " << rc.hash << '\n';
  }
  return ck;
}

int cmd_train(const Common& c, const std::string& stage, const std::string& log_path) {
  RunConfig rc = load(c);
  if (c.checkpoint.empty()) throw ConfigError("train needs --checkpoint for the output");
  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw ConfigError("cannot open log " + log_path);
    log = &log_file;
  }
  PolicyCheckpoint ck;
  if (stage == "2") {
    ck = load_ckpt(rc, c.checkpoint);
  } else {
    ck = initial_checkpoint(rc.env, rc.train);
  }
  ck.config_hash = rc.hash;
  double wall = 0.0;
  if (stage == "1" || stage == "all") {
    const TrainingReport r = train_stage1(rc.env, ck, rc.train, log);
    wall += r.wall_time;
    save_checkpoint(c.checkpoint, ck);
  }
  if (stage == "2" || stage == "all") {
    const auto measures = estimate_measures(rc.env.hybrid(), rc.env.buffers, rc.verifier.estimation);
    try {
      const TrainingReport r = train_stage2(rc.env, ck, rc.train, measures, rc.verifier, log);
      wall += r.wall_time;
    } catch (const CertificateUnreachable& e) {
      save_checkpoint(c.checkpoint, ck);
      std::cerr << "stage 2 failed: " << e.what() << '\n';
      return 1;
    }
    save_checkpoint(c.checkpoint, ck);
  }
  *log << nlohmann::json{{"summary", "done"}, {"stage", stage}, {"wall_time_s", wall}}.dump() << '\n';
  return 0;
}

int cmd_verify(const Common& c) {
  RunConfig rc = load(c);
  PolicyCheckpoint ck = load_ckpt(rc, c.checkpoint);
  const auto measures = estimate_measures(rc.env.hybrid(), ck.policy.buffers(), rc.verifier.estimation);
  SafetyCertificate cert = certify(rc.env.hybrid(), ck.policy, measures, rc.verifier);
  cert.config_hash = rc.hash;
  cert.timestamp = certificate_timestamp();
  const nlohmann::json j = certificate_to_json(cert);
  if (!c.out.empty()) write_json_file(c.out, j);
  std::cout << "overall: " << (cert.overall ? "true" : "false") << " (" << cert.status << ")\n";
  return cert.overall ? 0 : 1;
}

int cmd_eval(const Common& c) {
  RunConfig rc = load(c);
  PolicyCheckpoint ck = load_ckpt(rc, c.checkpoint);
  const EvalResult r = evaluate(rc.env, ck.policy, rc.eval);
  if (!c.out.empty()) write_json_file(c.out, eval_result_to_json(r));
  std::cout << "ACS% " << r.acs_percent << "  CCV% " << r.ccv_percent << '\n';
  return r.acs_percent == 100.0 && r.ccv_percent == 100.0 ? 0 : 1;
}

int cmd_rollout(const Common& c, const std::vector<double>& state, std::optional<std::size_t> mode,
                double horizon) {
  RunConfig rc = load(c);
  PolicyCheckpoint ck = load_ckpt(rc, c.checkpoint);
  const HybridAutomaton& H = rc.env.hybrid();
  ModeId q;
  Vec s;
  if (state.empty()) {
    std::mt19937_64 rng(rc.eval.seed);
    std::tie(q, s) = H.sample_initial(rng);
  } else {
    s = Eigen::Map<const Vec>(state.data(), static_cast<Eigen::Index>(state.size()));
    if (s.size() != H.state_dim()) throw ConfigError("--state has the wrong dimension");
    q = mode ? ModeId(*mode) : H.locate(s, H.initial_distribution().mode);
  }
  const FeedbackLaw law = [&ck](ModeId m, const Vec& x) { return ck.policy.act(m, x); };
  RolloutOptions opts;
  opts.capture_errors = true;
  const HybridTrajectory tr = rollout(H, law, s, q, horizon > 0 ? horizon : rc.eval.horizon, rc.env.dt, opts);
  if (c.out.empty()) {
    write_trajectory_csv(std::cout, tr, H.state_dim(), H.control_dim());
  } else {
    std::ofstream out(c.out);
    if (!out) throw Error("cannot write " + c.out);
    write_trajectory_csv(out, tr, H.state_dim(), H.control_dim());
  }
  const ViolationCheck v = first_violation(rc.env, tr);
  if (tr.failed) std::cerr << "rollout failed: " << tr.failure << '\n';
  return v.violated ? 1 : 0;
}

int cmd_export(const Common& c, const std::vector<int>& axes) {
  RunConfig rc = load(c);
  PolicyCheckpoint ck = load_ckpt(rc, c.checkpoint);
  if (axes.size() != 2) throw ConfigError("--axes needs two coordinate indices");
  if (c.out.empty()) throw ConfigError("export needs --out");
  std::vector<HybridTrajectory> trajs;
  const EvalResult r = evaluate(rc.env, ck.policy, rc.eval, &trajs);
  export_phase_portrait(trajs, axes[0], axes[1], c.out, &rc.env);
  std::cout << "wrote " << trajs.size() << " trajectories to " << c.out << " (ACS% " << r.acs_percent
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe RL for hybrid systems: train, certify and evaluate switched affine/MLP policies"};
  app.footer(kSchemaHelp);
  app.require_subcommand(1);

  Common common;
  std::string stage = "all";
  std::string log_path;
  auto* train = app.add_subcommand("train", "run stage 1 (TD3), stage 2 (affine certificates) or both");
  add_common(train, common, false);
  train->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  train->add_option("--log", log_path, "JSON-lines training report (default stdout)");

  auto* verify = app.add_subcommand("verify", "check vertex conditions and write a certificate");
  add_common(verify, common, true);

  auto* eval = app.add_subcommand("eval", "ACS%/CCV% over the evaluation protocol");
  add_common(eval, common, true);

  std::vector<double> state;
  std::optional<std::size_t> mode;
  double horizon = 0.0;
  auto* roll = app.add_subcommand("rollout", "simulate one closed-loop trajectory to CSV");
  add_common(roll, common, true);
  roll->add_option("--state", state, "initial state (default: sample rho0)")->delimiter(',');
  roll->add_option("--mode", mode, "initial mode index (default: by domain)");
  roll->add_option("--horizon", horizon, "seconds (default: eval horizon)");

  std::vector<int> axes{0, 1};
  auto* exp = app.add_subcommand("export", "phase-portrait CSV and sidecar JSON of the eval rollouts");
  add_common(exp, common, true);
  exp->add_option("--axes", axes, "two state indices")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(common, stage, log_path);
    if (*verify) return cmd_verify(common);
    if (*eval) return cmd_eval(common);
    if (*roll) return cmd_rollout(common, state, mode, horizon);
    if (*exp) return cmd_export(common, axes);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << kSchemaHelp << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
