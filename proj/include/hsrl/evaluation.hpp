#ifndef HSRL_EVALUATION_HPP
#define HSRL_EVALUATION_HPP

#include "hsrl/environments.hpp"
#include "hsrl/policy.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace hsrl {

struct EvalProtocol {
  int n_near_constraint = 25;  // starts inside the nominal B box
  int n_near_reset = 25;       // starts inside the nominal B_J box
  int n_far = 50;              // starts from rho0
  double horizon = 8.0;
  std::uint64_t seed = 0;
};

EvalProtocol eval_protocol_from_json(const nlohmann::json& j);

struct RolloutRecord {
  std::string origin;
  ModeId start_mode;
  Vec start_state;
  bool violated = false;
  double first_violation_time = 0.0;
  bool completed = false;
  std::string error;
};

struct EvalResult {
  double acs_percent = 0.0;
  double ccv_percent = 0.0;
  std::vector<RolloutRecord> rollouts;
};

/// Start states of the protocol, in rollout order.
std::vector<std::pair<std::string, std::pair<ModeId, Vec>>> protocol_starts(const Environment& env,
                                                                            const EvalProtocol& p);

/// Seeded rollouts; simulation errors count as violations.
EvalResult evaluate(const Environment& env, const SwitchedPolicy& policy, const EvalProtocol& protocol,
                    std::vector<HybridTrajectory>* trajectories = nullptr);

/// Percentages recomputed from per-rollout records.
std::pair<double, double> summarize(const std::vector<RolloutRecord>& rollouts);

nlohmann::json eval_result_to_json(const EvalResult& r);

/// CSV `traj_id,t,x_axis,y_axis,mode,event_flag` plus `<path>.json` with the
/// constraint lines and buffer boxes projected on the two axes.
void export_phase_portrait(const std::vector<HybridTrajectory>& trajectories, int x_axis, int y_axis,
                           const std::string& path, const Environment* env = nullptr);

}  // namespace hsrl

#endif  // HSRL_EVALUATION_HPP
