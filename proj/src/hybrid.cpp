#include "hsrl/hybrid.hpp"

#include "hsrl/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

namespace hsrl {

AffineResetMap AffineResetMap::identity(Eigen::Index n) {
  return {Mat::Identity(n, n), Vec::Zero(n)};
}

Vec apply_reset(const AffineResetMap& reset, const Vec& state) {
  if (reset.M.rows() != state.size() || reset.M.cols() != state.size() ||
      reset.p.size() != state.size()) {
    throw ConfigError("reset map dimension mismatch");
  }
  return reset.M * state + reset.p;
}

HybridAutomaton::HybridAutomaton(Eigen::Index state_dim, Eigen::Index control_dim,
                                 std::vector<Mode> modes, DynamicsHandle dynamics,
                                 std::vector<GuardedTransition> transitions, Box control_bounds,
                                 InitialDistribution initial)
    : n_(state_dim),
      m_(control_dim),
      modes_(std::move(modes)),
      dynamics_(std::move(dynamics)),
      transitions_(std::move(transitions)),
      control_bounds_(std::move(control_bounds)),
      initial_(std::move(initial)) {
  if (n_ <= 0 || m_ <= 0) throw ConfigError("state and control dimensions must be positive");
  if (modes_.empty()) throw ConfigError("automaton needs at least one mode");
  if (!dynamics_) throw ConfigError("automaton needs a dynamics handle");
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    const Mode& q = modes_[i];
    if (q.id.index != i) throw ConfigError("mode ids must equal their position");
    if (q.domain.dim() != n_) throw ConfigError("mode domain has wrong dimension");
    if (q.domain.degenerate()) throw ConfigError("mode domain '" + q.name + "' is degenerate");
  }
  for (const auto& tr : transitions_) {
    if (tr.from_mode.index >= modes_.size() || tr.to_mode.index >= modes_.size()) {
      throw ConfigError("transition references an unknown mode");
    }
    if (tr.guard_normal.size() != n_) throw ConfigError("guard normal has wrong dimension");
    if (tr.guard_normal.isZero(0.0)) throw ConfigError("guard normal must be non-zero");
    if (tr.reset.M.rows() != n_ || tr.reset.M.cols() != n_ || tr.reset.p.size() != n_) {
      throw ConfigError("reset map has wrong dimension");
    }
    if (!tr.reset.M.allFinite() || !tr.reset.p.allFinite() || !std::isfinite(tr.guard_offset)) {
      throw ConfigError("transition has non-finite entries");
    }
  }
  if (control_bounds_.dim() != m_) throw ConfigError("control bounds have wrong dimension");
  if (initial_.box.dim() != n_) throw ConfigError("initial box has wrong dimension");
  if (initial_.mode.index >= modes_.size()) throw ConfigError("initial mode out of range");
}

const Mode& HybridAutomaton::mode(ModeId id) const {
  if (id.index >= modes_.size()) throw NoValidMode("mode index out of range");
  return modes_[id.index];
}

Vec HybridAutomaton::dynamics(ModeId mode, const Vec& state, const Vec& control) const {
  Vec f = dynamics_(mode, state, control);
  if (f.size() != n_ || !f.allFinite()) {
    throw NonFiniteDynamics("dynamics returned a non-finite or mis-sized derivative");
  }
  return f;
}

ModeId HybridAutomaton::locate(const Vec& state, ModeId hint) const {
  constexpr double tol = 1e-8;
  if (hint.index < modes_.size() && modes_[hint.index].domain.contains(state, tol)) return hint;
  for (const auto& q : modes_) {
    if (q.domain.contains(state, tol)) return q.id;
  }
  throw NoValidMode("state lies outside every mode domain");
}

std::pair<ModeId, Vec> HybridAutomaton::sample_initial(std::mt19937_64& rng) const {
  Vec s(n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    std::uniform_real_distribution<double> dist(initial_.box.lo[i], initial_.box.hi[i]);
    s[i] = initial_.box.lo[i] == initial_.box.hi[i] ? initial_.box.lo[i] : dist(rng);
  }
  return {locate(s, initial_.mode), s};
}

Vec rk4(const HybridAutomaton& automaton, ModeId mode, const Vec& state, const Vec& control,
        double h) {
  const Vec k1 = automaton.dynamics(mode, state, control);
  const Vec k2 = automaton.dynamics(mode, state + 0.5 * h * k1, control);
  const Vec k3 = automaton.dynamics(mode, state + 0.5 * h * k2, control);
  const Vec k4 = automaton.dynamics(mode, state + h * k3, control);
  return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

bool crossed(CrossingDirection dir, double g) {
  return dir == CrossingDirection::decreasing ? g < 0.0 : g > 0.0;
}

bool fires(CrossingDirection dir, double g0, double g1) {
  return dir == CrossingDirection::decreasing ? (g0 >= 0.0 && g1 < 0.0) : (g0 <= 0.0 && g1 > 0.0);
}

struct Crossing {
  double tau;
  Vec state;
};

// Bisection on the sub-step length. The bracket [lo, hi] keeps g uncrossed at
// lo and crossed at hi.
Crossing localize(const HybridAutomaton& a, ModeId q, const Vec& s, const Vec& u,
                  const GuardedTransition& tr, double g0, double h, const StepOptions& opt) {
  if (std::abs(g0) <= opt.guard_tolerance) {
    // On the surface: fire now only if the flow points across it. A state
    // that was just reset onto the guard and moves away must not re-fire.
    const double rate = tr.guard_normal.dot(a.dynamics(q, s, u));
    const bool inward = tr.crossing_direction == CrossingDirection::decreasing ? rate < 0.0 : rate > 0.0;
    if (inward) return {0.0, s};
  }
  double lo = 0.0;
  double hi = h;
  Vec s_hi = rk4(a, q, s, u, h);
  for (int it = 0; it < opt.max_bisection_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket exhausted in floating point
    Vec s_mid = rk4(a, q, s, u, mid);
    const double gm = tr.guard(s_mid);
    if (std::abs(gm) <= opt.guard_tolerance) return {mid, std::move(s_mid)};
    if (crossed(tr.crossing_direction, gm)) {
      hi = mid;
      s_hi = std::move(s_mid);
    } else {
      lo = mid;
    }
  }
  return {hi, s_hi};
}

}  // namespace

StepResult step(const HybridAutomaton& automaton, ModeId mode, const Vec& state, Vec control,
                double dt, const StepOptions& options, const FeedbackLaw* on_event) {
  if (!(dt > 0.0)) throw ConfigError("step size must be positive");
  if (state.size() != automaton.state_dim() || control.size() != automaton.control_dim()) {
    throw ConfigError("state or control has wrong dimension");
  }
  if (!state.allFinite() || !control.allFinite()) {
    throw NonFiniteDynamics("non-finite state or control");
  }
  if (!automaton.mode(mode).domain.contains(state, options.domain_tolerance)) {
    throw NoValidMode("state outside the domain of mode " + automaton.mode(mode).name);
  }

  StepResult out{mode, state, {}};
  double elapsed = 0.0;
  double remaining = dt;
  const auto& transitions = automaton.transitions();

  for (;;) {
    const Vec s_end = rk4(automaton, out.mode, out.state, control, remaining);

    std::size_t best = transitions.size();
    Crossing best_crossing{std::numeric_limits<double>::infinity(), {}};
    double runner_up = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < transitions.size(); ++k) {
      const auto& tr = transitions[k];
      if (tr.from_mode != out.mode) continue;
      const double g0 = tr.guard(out.state);
      const double g1 = tr.guard(s_end);
      const bool at_surface =
          std::abs(g0) <= options.guard_tolerance && crossed(tr.crossing_direction, g1);
      if (!at_surface && !fires(tr.crossing_direction, g0, g1)) continue;
      Crossing c = localize(automaton, out.mode, out.state, control, tr, g0, remaining, options);
      if (c.tau < best_crossing.tau) {
        runner_up = best_crossing.tau;
        best_crossing = std::move(c);
        best = k;
      } else {
        runner_up = std::min(runner_up, c.tau);
      }
    }

    if (best == transitions.size()) {
      if (!automaton.mode(out.mode).domain.contains(s_end, options.domain_tolerance)) {
        throw NoValidMode("state left the domain of mode " + automaton.mode(out.mode).name +
                          " without a firing guard");
      }
      out.state = s_end;
      return out;
    }
    if (runner_up - best_crossing.tau <= options.simultaneity_tolerance) {
      throw AmbiguousEvent("two guards fire at the same instant");
    }

    const auto& tr = transitions[best];
    EventRecord ev;
    ev.time = elapsed + best_crossing.tau;
    ev.transition = best;
    ev.pre_state = best_crossing.state;
    ev.post_state = apply_reset(tr.reset, ev.pre_state);
    if (!ev.post_state.allFinite()) throw NonFiniteDynamics("non-finite post-reset state");
    if (!automaton.mode(tr.to_mode).domain.contains(ev.post_state, options.domain_tolerance)) {
      throw NoValidMode("post-reset state outside the domain of mode " +
                        automaton.mode(tr.to_mode).name);
    }
    out.mode = tr.to_mode;
    out.state = ev.post_state;
    out.events.push_back(std::move(ev));
    if (static_cast<int>(out.events.size()) > options.max_events_per_step) {
      throw AmbiguousEvent("event limit exceeded within one step (chattering guard)");
    }
    elapsed += best_crossing.tau;
    remaining = dt - elapsed;
    if (on_event != nullptr && *on_event) control = (*on_event)(out.mode, out.state);
    if (remaining <= 0.0) return out;
  }
}

namespace {

std::string at_time(const std::string& what, double t) {
  std::ostringstream os;
  os << what << " (t = " << t << " s)";
  return os.str();
}

template <typename E>
[[noreturn]] void rethrow_at(const E& e, double t) {
  throw E(at_time(e.what(), t));
}

}  // namespace

HybridTrajectory rollout(const HybridAutomaton& automaton, const FeedbackLaw& policy,
                         const Vec& s0, ModeId mode0, double horizon, double dt,
                         const RolloutOptions& options) {
  if (!(dt > 0.0)) throw ConfigError("rollout dt must be positive");
  HybridTrajectory traj;
  ModeId q = mode0;
  Vec s = s0;
  double t = 0.0;
  try {
    if (!automaton.mode(q).domain.contains(s, options.step.domain_tolerance)) {
      throw NoValidMode("initial state outside the domain of mode " + automaton.mode(q).name);
    }
    Vec u = policy(q, s);
    traj.samples.push_back({0.0, q, s, u, SampleKind::regular});
    const long steps = horizon > 0.0 ? std::lround(horizon / dt) : 0;
    const FeedbackLaw* feedback = options.reevaluate_after_reset ? &policy : nullptr;
    for (long k = 0; k < steps; ++k) {
      t = static_cast<double>(k) * dt;
      StepResult r = step(automaton, q, s, u, dt, options.step, feedback);
      Vec u_pre = u;
      for (auto& ev : r.events) {
        const auto& tr = automaton.transitions()[ev.transition];
        const Vec u_post = options.reevaluate_after_reset ? policy(tr.to_mode, ev.post_state) : u;
        traj.samples.push_back({t + ev.time, tr.from_mode, ev.pre_state, u_pre, SampleKind::pre_event});
        traj.samples.push_back({t + ev.time, tr.to_mode, ev.post_state, u_post, SampleKind::post_event});
        u_pre = u_post;
        ev.time += t;
        traj.events.push_back(std::move(ev));
      }
      q = r.mode;
      s = std::move(r.state);
      u = policy(q, s);
      traj.samples.push_back({static_cast<double>(k + 1) * dt, q, s, u, SampleKind::regular});
    }
  } catch (const NoValidMode& e) {
    if (!options.capture_errors) rethrow_at(e, t);
    traj.failed = true;
    traj.failure = at_time(e.what(), t);
  } catch (const AmbiguousEvent& e) {
    if (!options.capture_errors) rethrow_at(e, t);
    traj.failed = true;
    traj.failure = at_time(e.what(), t);
  } catch (const NonFiniteDynamics& e) {
    if (!options.capture_errors) rethrow_at(e, t);
    traj.failed = true;
    traj.failure = at_time(e.what(), t);
  }
  if (traj.failed) traj.failure_time = t;
  return traj;
}

void write_trajectory_csv(std::ostream& out, const HybridTrajectory& trajectory,
                          Eigen::Index state_dim, Eigen::Index control_dim) {
  out << "t,mode";
  for (Eigen::Index i = 0; i < state_dim; ++i) out << ",s_" << i;
  for (Eigen::Index i = 0; i < control_dim; ++i) out << ",u_" << i;
  out << ",event_flag\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  };
  for (const auto& smp : trajectory.samples) {
    out << num(smp.time) << ',' << smp.mode.index;
    for (Eigen::Index i = 0; i < state_dim; ++i) out << ',' << num(smp.state[i]);
    for (Eigen::Index i = 0; i < control_dim; ++i) out << ',' << num(smp.control[i]);
    out << ',' << static_cast<int>(smp.kind) << '\n';
  }
}

json automaton_to_json(const HybridAutomaton& a) {
  json j;
  j["state_dim"] = a.state_dim();
  j["control_dim"] = a.control_dim();
  for (const auto& q : a.modes()) j["modes"].push_back({{"name", q.name}, {"domain", box_to_json(q.domain)}});
  j["transitions"] = json::array();
  for (const auto& tr : a.transitions()) {
    j["transitions"].push_back({
        {"from", tr.from_mode.index},
        {"to", tr.to_mode.index},
        {"guard_normal", vec_to_json(tr.guard_normal)},
        {"guard_offset", tr.guard_offset},
        {"direction", tr.crossing_direction == CrossingDirection::decreasing ? "decreasing" : "increasing"},
        {"M", mat_to_json(tr.reset.M)},
        {"p", vec_to_json(tr.reset.p)},
    });
  }
  j["control_bounds"] = box_to_json(a.control_bounds());
  j["initial"] = {{"box", box_to_json(a.initial_distribution().box)},
                  {"mode", a.initial_distribution().mode.index}};
  return j;
}

HybridAutomaton automaton_from_json(const json& j, DynamicsHandle dynamics) {
  const auto n = static_cast<Eigen::Index>(value_or<long>(j, "state_dim", 0));
  const auto m = static_cast<Eigen::Index>(value_or<long>(j, "control_dim", 0));
  std::vector<Mode> modes;
  const json& jm = require(j, "modes");
  if (!jm.is_array()) throw ConfigError("'modes' must be an array");
  for (std::size_t i = 0; i < jm.size(); ++i) {
    modes.push_back({ModeId(i), value_or<std::string>(jm[i], "name", "q" + std::to_string(i + 1)),
                     box_from_json(require(jm[i], "domain"), "mode domain")});
  }
  std::vector<GuardedTransition> transitions;
  if (j.contains("transitions")) {
    for (const auto& jt : j.at("transitions")) {
      GuardedTransition tr;
      tr.from_mode = ModeId(require(jt, "from").get<std::size_t>());
      tr.to_mode = ModeId(require(jt, "to").get<std::size_t>());
      tr.guard_normal = vec_from_json(require(jt, "guard_normal"), "guard_normal");
      tr.guard_offset = value_or<double>(jt, "guard_offset", 0.0);
      const auto dir = value_or<std::string>(jt, "direction", "decreasing");
      if (dir == "decreasing") {
        tr.crossing_direction = CrossingDirection::decreasing;
      } else if (dir == "increasing") {
        tr.crossing_direction = CrossingDirection::increasing;
      } else {
        throw ConfigError("unknown crossing direction '" + dir + "'");
      }
      tr.reset.M = jt.contains("M") ? mat_from_json(jt.at("M"), "reset M") : Mat::Identity(n, n);
      tr.reset.p = jt.contains("p") ? vec_from_json(jt.at("p"), "reset p") : Vec::Zero(n);
      transitions.push_back(std::move(tr));
    }
  }
  Box ubox = box_from_json(require(j, "control_bounds"), "control_bounds");
  const json& ji = require(j, "initial");
  InitialDistribution init{box_from_json(require(ji, "box"), "initial box"),
                           ModeId(value_or<std::size_t>(ji, "mode", 0))};
  return HybridAutomaton(n, m, std::move(modes), std::move(dynamics), std::move(transitions),
                         std::move(ubox), std::move(init));
}

}  // namespace hsrl
