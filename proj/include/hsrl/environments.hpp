#ifndef HSRL_ENVIRONMENTS_HPP
#define HSRL_ENVIRONMENTS_HPP

#include "hsrl/geometry.hpp"
#include "hsrl/hybrid.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hsrl {

/// r(q, s, u, q', s') for one control step.
using RewardFn = std::function<double(ModeId, const Vec&, const Vec&, ModeId, const Vec&)>;
/// Task success over a finished rollout of the given horizon.
using CompletionFn = std::function<bool(const HybridTrajectory&, double horizon)>;

struct StartRegion {
  std::string name;
  Box box;
  ModeId mode;        // preferred mode; the containing domain decides
  double weight = 1.0;
};

/// Everything needed to train, certify and evaluate on one system.
struct Environment {
  std::string name;
  std::shared_ptr<const HybridAutomaton> automaton;
  std::vector<AffineConstraint> constraints;
  std::vector<JumpConstraint> jump_constraints;
  std::vector<BufferSpec> buffers;
  RewardFn reward;
  CompletionFn completed;
  double dt = 0.01;
  /// Box used to normalise network inputs.
  Box state_scale;
  /// Stage-1 episode start distribution (mixture).
  std::vector<StartRegion> train_starts;
  /// Near-boundary evaluation regions (B and B_J as seen from outside).
  StartRegion near_constraint;
  StartRegion near_reset;
  /// Reward added when an episode ends by leaving the mode domains.
  double failure_penalty = -100.0;

  const HybridAutomaton& hybrid() const { return *automaton; }
};

struct PendulumParams {
  double g = 9.81;
  double l = 3.0;
  double ls_ratio = 0.3;  // l_s = ls_ratio * l
  double m = 1.0;
  double z = 0.1;
  double phi_p = -3.14159265358979323846 / 12.0;
  double phidot_max = 5.0;
  double u_max = 30.0;
  double buffer_width = 0.5;     // along phidot
  double segment_length = 0.5;   // max phi extent per buffer segment
  double buffer_margin = 3.0;    // target certificate margin
  double target = -3.14159265358979323846 / 2.0;
  double completion_tolerance = 0.05;
  double completion_window = 2.0;
  // "abs" tracks |phi - target|; "quadratic" uses (phi - target)^2.
  std::string tracking = "abs";
  // Weight of exp(-(e / completion_tolerance)^2), rewarding a precise hold.
  double hold_bonus = 1.0;

  double l_s() const { return ls_ratio * l; }
  double eta() const { return l / l_s(); }
};

struct JugglerParams {
  double g = 9.81;
  double e = 0.8;
  double sdot_max = 4.0;
  double u_max = 20.0;
  double buffer_width = 0.5;
  double ydot_max = 2.0;
  double buffer_margin = 2.0;
  // u enters s1' directly, so the jump output has relative degree 1 in the
  // control even though the task declares 2; the degree-2 bound needs the
  // entry rate ydot <= ydot_max, which the MLP outside B_J does not respect.
  int jump_relative_degree = 2;
  double target_height = 0.6;     // apex height the reward saturates at
  double completion_fraction = 0.9;
  double completion_window = 2.0;
};

PendulumParams pendulum_params_from_json(const nlohmann::json& j);
JugglerParams juggler_params_from_json(const nlohmann::json& j);

Environment build_pendulum(const PendulumParams& params = {});
Environment build_juggler(const JugglerParams& params = {});

/// Piecewise-affine dynamics f_q = A_q s + B_q u + c_q from a JSON automaton
/// document with per-mode "A", "B", "c" and declared constraints/buffers.
Environment build_linear(const nlohmann::json& j);

/// Dispatch on j["env"] in {"pendulum", "juggler", "linear"} with
/// j["params"] overrides.
Environment build_environment(const nlohmann::json& j);

/// Draw a start state from a region (mode resolved by domain membership).
std::pair<ModeId, Vec> sample_region(const HybridAutomaton& automaton, const StartRegion& region,
                                     std::mt19937_64& rng);

struct ViolationCheck {
  bool violated = false;
  double time = 0.0;
};

/// Any sample with an active constraint above its bound, or a pre-event
/// sample breaching the jump constraint of the firing transition.
ViolationCheck first_violation(const Environment& env, const HybridTrajectory& traj,
                               double tol = 1e-9);

/// Largest local maxima of a + b . s over samples with t >= t0.
double max_local_apex(const HybridTrajectory& traj, double t0, const Vec& weights);

}  // namespace hsrl

#endif  // HSRL_ENVIRONMENTS_HPP
