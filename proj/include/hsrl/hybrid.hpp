#ifndef HSRL_HYBRID_HPP
#define HSRL_HYBRID_HPP

// Hybrid automata with affine guards and affine reset maps, simulated by
// fixed-step RK4 with bisection-localized guard events.

#include "hsrl/types.hpp"

#include <json.hpp>

#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace hsrl {

/// Black-box vector field f(mode, state, control). Must be deterministic.
using DynamicsHandle = std::function<Vec(ModeId, const Vec&, const Vec&)>;

/// Feedback law evaluated at every sample (and after every reset).
using FeedbackLaw = std::function<Vec(ModeId, const Vec&)>;

/// s' = M s + p
struct AffineResetMap {
  Mat M;
  Vec p;

  static AffineResetMap identity(Eigen::Index n);
};

Vec apply_reset(const AffineResetMap& reset, const Vec& state);

enum class CrossingDirection { decreasing, increasing };

struct GuardedTransition {
  ModeId from_mode;
  ModeId to_mode;
  Vec guard_normal;
  double guard_offset = 0.0;
  CrossingDirection crossing_direction = CrossingDirection::decreasing;
  AffineResetMap reset;

  double guard(const Vec& s) const { return guard_normal.dot(s) - guard_offset; }
};

struct Mode {
  ModeId id;
  std::string name;
  Box domain;
};

/// Initial-state distribution: uniform over a box, mode chosen by domain
/// membership (first mode whose domain holds the sample, falling back to
/// `mode`).
struct InitialDistribution {
  Box box;
  ModeId mode;
};

class HybridAutomaton {
 public:
  HybridAutomaton(Eigen::Index state_dim, Eigen::Index control_dim, std::vector<Mode> modes,
                  DynamicsHandle dynamics, std::vector<GuardedTransition> transitions,
                  Box control_bounds, InitialDistribution initial);

  Eigen::Index state_dim() const { return n_; }
  Eigen::Index control_dim() const { return m_; }
  const std::vector<Mode>& modes() const { return modes_; }
  const Mode& mode(ModeId id) const;
  const std::vector<GuardedTransition>& transitions() const { return transitions_; }
  const Box& control_bounds() const { return control_bounds_; }
  const InitialDistribution& initial_distribution() const { return initial_; }

  Vec dynamics(ModeId mode, const Vec& state, const Vec& control) const;
  const DynamicsHandle& dynamics_handle() const { return dynamics_; }

  /// Mode whose domain contains `state`, preferring `hint`.
  ModeId locate(const Vec& state, ModeId hint) const;

  /// Draw (mode, state) from the initial distribution.
  std::pair<ModeId, Vec> sample_initial(std::mt19937_64& rng) const;

 private:
  Eigen::Index n_;
  Eigen::Index m_;
  std::vector<Mode> modes_;
  DynamicsHandle dynamics_;
  std::vector<GuardedTransition> transitions_;
  Box control_bounds_;
  InitialDistribution initial_;
};

struct StepOptions {
  double guard_tolerance = 1e-10;
  int max_bisection_iterations = 100;
  int max_events_per_step = 32;
  double domain_tolerance = 1e-8;
  /// Time separation below which two guard crossings count as simultaneous.
  double simultaneity_tolerance = 1e-12;
};

struct EventRecord {
  double time = 0.0;
  std::size_t transition = 0;
  Vec pre_state;
  Vec post_state;
};

struct StepResult {
  ModeId mode;
  Vec state;
  std::vector<EventRecord> events;  // times relative to the step start
};

/// Single RK4 step of the mode's flow with held control. No event handling.
Vec rk4(const HybridAutomaton& automaton, ModeId mode, const Vec& state, const Vec& control,
        double h);

/// Advance by `dt` holding `control`. Guard crossings inside the step are
/// localized by bisection, the reset is applied and integration resumes in the
/// target mode. When `on_event` is set, the control for the remainder of the
/// step is re-evaluated at the post-reset state.
StepResult step(const HybridAutomaton& automaton, ModeId mode, const Vec& state, Vec control,
                double dt, const StepOptions& options = {}, const FeedbackLaw* on_event = nullptr);

enum class SampleKind : int { regular = 0, pre_event = 1, post_event = 2 };

struct Sample {
  double time = 0.0;
  ModeId mode;
  Vec state;
  Vec control;
  SampleKind kind = SampleKind::regular;
};

struct HybridTrajectory {
  std::vector<Sample> samples;
  std::vector<EventRecord> events;
  bool failed = false;
  std::string failure;  // error message, annotated with the failure time
  double failure_time = 0.0;
};

struct RolloutOptions {
  StepOptions step;
  /// Re-evaluate the policy right after each reset (event-triggered update).
  bool reevaluate_after_reset = true;
  /// Record errors in the trajectory instead of throwing.
  bool capture_errors = false;
};

/// Closed-loop simulation from (mode0, s0) for `horizon` seconds.
HybridTrajectory rollout(const HybridAutomaton& automaton, const FeedbackLaw& policy,
                         const Vec& s0, ModeId mode0, double horizon, double dt,
                         const RolloutOptions& options = {});

/// CSV with header `t,mode,s_0..s_{n-1},u_0..u_{m-1},event_flag`.
void write_trajectory_csv(std::ostream& out, const HybridTrajectory& trajectory,
                          Eigen::Index state_dim, Eigen::Index control_dim);

/// Structural part of an automaton (modes, transitions, bounds, rho0).
nlohmann::json automaton_to_json(const HybridAutomaton& automaton);
HybridAutomaton automaton_from_json(const nlohmann::json& j, DynamicsHandle dynamics);

}  // namespace hsrl

#endif  // HSRL_HYBRID_HPP
