#include "hsrl/evaluation.hpp"

#include "hsrl/json_io.hpp"

#include <cstdio>
#include <fstream>

namespace hsrl {

EvalProtocol eval_protocol_from_json(const nlohmann::json& j) {
  EvalProtocol p;
  p.n_near_constraint = value_or(j, "n_near_constraint", p.n_near_constraint);
  p.n_near_reset = value_or(j, "n_near_reset", p.n_near_reset);
  p.n_far = value_or(j, "n_far", p.n_far);
  p.horizon = value_or(j, "horizon", p.horizon);
  p.seed = value_or(j, "seed", p.seed);
  if (p.n_near_constraint < 0 || p.n_near_reset < 0 || p.n_far < 0 ||
      p.n_near_constraint + p.n_near_reset + p.n_far == 0) {
    throw ConfigError("evaluation needs a positive number of rollouts");
  }
  if (!(p.horizon > 0.0)) throw ConfigError("evaluation horizon must be positive");
  return p;
}

std::vector<std::pair<std::string, std::pair<ModeId, Vec>>> protocol_starts(const Environment& env,
                                                                            const EvalProtocol& p) {
  std::mt19937_64 rng(p.seed);
  std::vector<std::pair<std::string, std::pair<ModeId, Vec>>> out;
  for (int i = 0; i < p.n_near_constraint; ++i) {
    out.emplace_back("near_constraint", sample_region(env.hybrid(), env.near_constraint, rng));
  }
  for (int i = 0; i < p.n_near_reset; ++i) {
    out.emplace_back("near_reset", sample_region(env.hybrid(), env.near_reset, rng));
  }
  for (int i = 0; i < p.n_far; ++i) out.emplace_back("rho0", env.hybrid().sample_initial(rng));
  return out;
}

std::pair<double, double> summarize(const std::vector<RolloutRecord>& rollouts) {
  if (rollouts.empty()) return {0.0, 0.0};
  std::size_t safe = 0, good = 0;
  for (const auto& r : rollouts) {
    safe += r.violated ? 0 : 1;
    good += (!r.violated && r.completed) ? 1 : 0;
  }
  const double N = static_cast<double>(rollouts.size());
  return {100.0 * static_cast<double>(safe) / N, 100.0 * static_cast<double>(good) / N};
}

EvalResult evaluate(const Environment& env, const SwitchedPolicy& policy, const EvalProtocol& protocol,
                    std::vector<HybridTrajectory>* trajectories) {
  EvalResult result;
  const FeedbackLaw law = [&policy](ModeId q, const Vec& s) { return policy.act(q, s); };
  RolloutOptions opts;
  opts.capture_errors = true;
  for (auto& [origin, start] : protocol_starts(env, protocol)) {
    RolloutRecord rec;
    rec.origin = origin;
    rec.start_mode = start.first;
    rec.start_state = start.second;
    HybridTrajectory tr = rollout(env.hybrid(), law, start.second, start.first, protocol.horizon, env.dt, opts);
    const ViolationCheck v = first_violation(env, tr);
    rec.violated = v.violated;
    rec.first_violation_time = v.time;
    rec.error = tr.failure;
    rec.completed = !tr.failed && env.completed(tr, protocol.horizon);
    result.rollouts.push_back(std::move(rec));
    if (trajectories != nullptr) trajectories->push_back(std::move(tr));
  }
  std::tie(result.acs_percent, result.ccv_percent) = summarize(result.rollouts);
  return result;
}

nlohmann::json eval_result_to_json(const EvalResult& r) {
  nlohmann::json j;
  j["acs_percent"] = r.acs_percent;
  j["ccv_percent"] = r.ccv_percent;
  j["rollouts"] = nlohmann::json::array();
  for (const auto& rec : r.rollouts) {
    nlohmann::json jr{{"origin", rec.origin},
                      {"start_mode", rec.start_mode.index},
                      {"start_state", vec_to_json(rec.start_state)},
                      {"violated", rec.violated},
                      {"completed", rec.completed}};
    if (rec.violated) jr["first_violation_time"] = rec.first_violation_time;
    if (!rec.error.empty()) jr["error"] = rec.error;
    j["rollouts"].push_back(std::move(jr));
  }
  return j;
}

void export_phase_portrait(const std::vector<HybridTrajectory>& trajectories, int x_axis, int y_axis,
                           const std::string& path, const Environment* env) {
  for (const auto& tr : trajectories) {
    for (const auto& smp : tr.samples) {
      if (x_axis < 0 || y_axis < 0 || x_axis >= smp.state.size() || y_axis >= smp.state.size()) {
        throw ConfigError("phase portrait axis out of range");
      }
    }
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "traj_id,t,x_axis,y_axis,mode,event_flag\n";
  char buf[160];
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    for (const auto& smp : trajectories[id].samples) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%zu,%d\n", id, smp.time, smp.state[x_axis],
                    smp.state[y_axis], smp.mode.index, static_cast<int>(smp.kind));
      out << buf;
    }
  }
  if (!out) throw Error("write failed: " + path);

  nlohmann::json side;
  side["axes"] = {x_axis, y_axis};
  side["constraints"] = nlohmann::json::array();
  side["buffers"] = nlohmann::json::array();
  if (env != nullptr) {
    // Constraint lines that depend on a single plotted axis are reported as
    // axis-aligned levels; others keep their full row.
    auto line = [&](const RowVec& C, double d, const std::string& kind, const std::vector<ModeId>& modes) {
      nlohmann::json jl{{"kind", kind}, {"C", vec_to_json(C.transpose())}, {"d", d}};
      std::vector<std::size_t> mi;
      for (auto q : modes) mi.push_back(q.index);
      jl["modes"] = mi;
      for (int ax : {x_axis, y_axis}) {
        RowVec rest = C;
        rest[ax] = 0.0;
        if (rest.isZero(0.0) && C[ax] != 0.0) {
          jl["axis"] = ax == x_axis ? "x" : "y";
          jl["level"] = d / C[ax];
        }
      }
      side["constraints"].push_back(std::move(jl));
    };
    for (const auto& c : env->constraints) line(c.C, c.d, "constraint", c.active_modes);
    for (const auto& jc : env->jump_constraints) {
      line(jc.C_tilde, jc.d_tilde, "jump",
           {env->hybrid().transitions()[jc.source_transition].from_mode});
    }
    for (const auto& b : env->buffers) {
      side["buffers"].push_back({{"name", b.name},
                                 {"mode", b.mode.index},
                                 {"x", {b.bounds.lo[x_axis], b.bounds.hi[x_axis]}},
                                 {"y", {b.bounds.lo[y_axis], b.bounds.hi[y_axis]}}});
    }
  }
  write_json_file(path + ".json", side);
}

}  // namespace hsrl
