#include "hsrl/environments.hpp"

#include "hsrl/json_io.hpp"

#include <cmath>
#include <limits>

namespace hsrl {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec vec4(double a, double b, double c, double d) {
  Vec v(4);
  v << a, b, c, d;
  return v;
}

Box box1(double lo, double hi) { return Box(Vec::Constant(1, lo), Vec::Constant(1, hi)); }

}  // namespace

PendulumParams pendulum_params_from_json(const nlohmann::json& j) {
  PendulumParams p;
  p.g = value_or(j, "g", p.g);
  p.l = value_or(j, "l", p.l);
  p.ls_ratio = value_or(j, "ls_ratio", p.ls_ratio);
  p.m = value_or(j, "m", p.m);
  p.z = value_or(j, "z", p.z);
  p.phi_p = value_or(j, "phi_p", p.phi_p);
  p.phidot_max = value_or(j, "phidot_max", p.phidot_max);
  p.u_max = value_or(j, "u_max", p.u_max);
  p.buffer_width = value_or(j, "buffer_width", p.buffer_width);
  p.segment_length = value_or(j, "segment_length", p.segment_length);
  p.buffer_margin = value_or(j, "buffer_margin", p.buffer_margin);
  p.target = value_or(j, "target", p.target);
  p.completion_tolerance = value_or(j, "completion_tolerance", p.completion_tolerance);
  p.completion_window = value_or(j, "completion_window", p.completion_window);
  p.tracking = value_or(j, "tracking", p.tracking);
  p.hold_bonus = value_or(j, "hold_bonus", p.hold_bonus);
  if (p.tracking != "abs" && p.tracking != "quadratic") {
    throw ConfigError("pendulum tracking must be 'abs' or 'quadratic'");
  }
  if (!(p.l > 0) || !(p.ls_ratio > 0 && p.ls_ratio < 1) || !(p.m > 0) || !(p.u_max > 0) ||
      !(p.phidot_max > 0) || !(p.buffer_width > 0) || !(p.segment_length > 0)) {
    throw ConfigError("invalid pendulum parameters");
  }
  return p;
}

JugglerParams juggler_params_from_json(const nlohmann::json& j) {
  JugglerParams p;
  p.g = value_or(j, "g", p.g);
  p.e = value_or(j, "e", p.e);
  p.sdot_max = value_or(j, "sdot_max", p.sdot_max);
  p.u_max = value_or(j, "u_max", p.u_max);
  p.buffer_width = value_or(j, "buffer_width", p.buffer_width);
  p.ydot_max = value_or(j, "ydot_max", p.ydot_max);
  p.buffer_margin = value_or(j, "buffer_margin", p.buffer_margin);
  p.jump_relative_degree = value_or(j, "jump_relative_degree", p.jump_relative_degree);
  p.target_height = value_or(j, "target_height", p.target_height);
  p.completion_fraction = value_or(j, "completion_fraction", p.completion_fraction);
  p.completion_window = value_or(j, "completion_window", p.completion_window);
  if (!(p.e > 0.0 && p.e <= 1.0) || !(p.u_max > 0) || !(p.sdot_max > 0) ||
      !(p.buffer_width > 0) || !(p.ydot_max > 0) || !(p.target_height > 0) ||
      (p.jump_relative_degree != 1 && p.jump_relative_degree != 2)) {
    throw ConfigError("invalid juggler parameters");
  }
  return p;
}

Environment build_pendulum(const PendulumParams& P) {
  const double eta = P.eta();
  const double phi_p = P.phi_p;
  const double two_pi = 2.0 * kPi;
  const double wmax = 60.0;

  std::vector<Mode> modes{
      {ModeId(0), "q1", Box(vec2(phi_p, -wmax), vec2(two_pi, wmax))},
      {ModeId(1), "q2", Box(vec2(-two_pi, -wmax), vec2(phi_p, wmax))},
  };
  const double lengths[2] = {P.l, P.l_s()};
  DynamicsHandle f = [P, lengths](ModeId q, const Vec& s, const Vec& u) {
    Vec ds(2);
    ds[0] = s[1];
    ds[1] = -(P.g / lengths[q.index]) * std::sin(s[0]) - (P.z / P.m) * s[1] + u[0];
    return ds;
  };

  Mat wrap = Mat::Zero(2, 2);
  wrap(1, 1) = eta;
  Mat unwrap = Mat::Zero(2, 2);
  unwrap(1, 1) = 1.0 / eta;
  std::vector<GuardedTransition> transitions{
      {ModeId(0), ModeId(1), vec2(1, 0), phi_p, CrossingDirection::decreasing, {wrap, vec2(phi_p, 0)}},
      {ModeId(1), ModeId(0), vec2(1, 0), phi_p, CrossingDirection::increasing, {unwrap, vec2(phi_p, 0)}},
  };
  InitialDistribution rho0{Box(vec2(-kPi / 3.0, 0.0), vec2(kPi / 6.0, 0.0)), ModeId(0)};

  Environment env;
  env.name = "pendulum";
  env.automaton = std::make_shared<HybridAutomaton>(2, 1, modes, f, transitions,
                                                    box1(-P.u_max, P.u_max), rho0);

  AffineConstraint speed{RowVec(2), P.phidot_max, {ModeId(1)}};
  speed.C << 0.0, -1.0;
  env.constraints.push_back(speed);
  JumpConstraint jc = derive_jump_constraint(speed, transitions[0].reset, 0);
  jc.relative_degree = 1;
  env.jump_constraints.push_back(jc);

  // Buffers tile the full phi range of each mode in short segments so that a
  // single affine actor per segment can dominate the sin nonlinearity.
  auto tile = [&](const std::string& prefix, ModeId q, double lo, double hi, double w_lo,
                  const RowVec& C, double d, bool jump) {
    const int count = static_cast<int>(std::ceil((hi - lo) / P.segment_length - 1e-9));
    for (int k = 0; k < count; ++k) {
      const double a = lo + (hi - lo) * k / count;
      const double b = k + 1 == count ? hi : lo + (hi - lo) * (k + 1) / count;
      BufferSpec buf;
      buf.name = prefix + "[" + std::to_string(k) + "]";
      buf.mode = q;
      buf.C = C;
      buf.d = d;
      buf.jump = jump;
      buf.source_transition = 0;
      buf.bounds = Box(vec2(a, w_lo), vec2(b, w_lo + P.buffer_width));
      buf.relative_degree = 1;
      buf.target_margin = P.buffer_margin;
      env.buffers.push_back(std::move(buf));
    }
  };
  // B: phidot in [-phidot_max, -phidot_max + w] while wrapped.
  // B_J: the pre-reset image of that band in the long mode.
  tile("B", ModeId(1), -two_pi, phi_p, -P.phidot_max, speed.C, speed.d, false);
  tile("BJ", ModeId(0), phi_p, two_pi, -P.phidot_max / eta, jc.C_tilde, jc.d_tilde, true);
  for (const auto& b : env.buffers) validate_buffer(b, *env.automaton);
  check_disjoint(env.buffers);

  const double target = P.target;
  // Gravity gives almost no restoring stiffness near the horizontal, so the
  // hold precision comes entirely from the actor's gain. With the quadratic
  // term alone TD3 settles 0.1-0.25 rad off target; the absolute error and a
  // narrow bonus around the target sharpen the signal.
  const bool quadratic = P.tracking == "quadratic";
  const double tol = P.completion_tolerance;
  const double bonus = P.hold_bonus;
  env.reward = [target, quadratic, tol, bonus](ModeId, const Vec&, const Vec& u, ModeId, const Vec& s) {
    const double e = s[0] - target;
    const double track = quadratic ? e * e : std::abs(e);
    return -track - 0.01 * s[1] * s[1] - 0.001 * u[0] * u[0] + bonus * std::exp(-(e / tol) * (e / tol));
  };
  const double window = P.completion_window;
  env.completed = [target, tol, window](const HybridTrajectory& tr, double horizon) {
    if (tr.failed) return false;
    for (const auto& smp : tr.samples) {
      if (smp.time >= horizon - window - 1e-9 && std::abs(smp.state[0] - target) <= tol) return true;
    }
    return false;
  };
  env.dt = 0.01;
  // Covers the region the task lives in; the domains extend further.
  env.state_scale = Box(vec2(-kPi, -8.0), vec2(kPi / 2.0, 8.0));
  env.near_constraint = {"B", Box(vec2(-kPi, -P.phidot_max), vec2(phi_p, -P.phidot_max + P.buffer_width)),
                         ModeId(1), 1.0};
  env.near_reset = {"B_J",
                    Box(vec2(phi_p, -P.phidot_max / eta), vec2(0.0, -P.phidot_max / eta + P.buffer_width)),
                    ModeId(0), 1.0};
  env.train_starts = {
      {"rho0", rho0.box, ModeId(0), 0.4},
      env.near_constraint,
      env.near_reset,
      {"wide", Box(vec2(-kPi, -3.0), vec2(kPi / 2.0, 3.0)), ModeId(0), 0.2},
  };
  env.train_starts[1].weight = 0.2;
  env.train_starts[2].weight = 0.2;
  return env;
}

Environment build_juggler(const JugglerParams& P) {
  std::vector<Mode> modes{{ModeId(0), "q", Box(vec4(0, -30, -20, -30), vec4(50, 30, 20, 30))}};
  const double g = P.g;
  DynamicsHandle f = [g](ModeId, const Vec& s, const Vec& u) {
    return vec4(s[1], -g - u[0], s[3], u[0]);
  };
  Mat M = Mat::Identity(4, 4);
  M(1, 1) = -P.e;
  std::vector<GuardedTransition> transitions{
      {ModeId(0), ModeId(0), vec4(1, 0, 0, 0), 0.0, CrossingDirection::decreasing, {M, Vec::Zero(4)}},
  };
  InitialDistribution rho0{Box(vec4(0.5, 0, 0, 0), vec4(1.5, 0, 0, 0)), ModeId(0)};

  Environment env;
  env.name = "juggler";
  env.automaton = std::make_shared<HybridAutomaton>(4, 1, modes, f, transitions,
                                                    box1(-P.u_max, P.u_max), rho0);

  AffineConstraint up{RowVec(4), P.sdot_max, {ModeId(0)}};
  up.C << 0, 1, 0, 0;
  env.constraints.push_back(up);
  JumpConstraint jc = derive_jump_constraint(up, transitions[0].reset, 0);
  jc.relative_degree = P.jump_relative_degree;
  env.jump_constraints.push_back(jc);

  const Box& dom = modes[0].domain;
  BufferSpec B;
  B.name = "B";
  B.mode = ModeId(0);
  B.C = up.C;
  B.d = up.d;
  B.bounds = Box(vec4(dom.lo[0], P.sdot_max - P.buffer_width, dom.lo[2], dom.lo[3]),
                 vec4(dom.hi[0], P.sdot_max, dom.hi[2], dom.hi[3]));
  B.relative_degree = 1;
  B.target_margin = P.buffer_margin;

  const double s1_min = -jc.d_tilde / P.e;  // -sdot_max / e
  BufferSpec BJ;
  BJ.name = "B_J";
  BJ.mode = ModeId(0);
  BJ.C = jc.C_tilde;
  BJ.d = jc.d_tilde;
  BJ.jump = true;
  BJ.bounds = Box(vec4(dom.lo[0], s1_min, dom.lo[2], dom.lo[3]),
                  vec4(dom.hi[0], s1_min + P.buffer_width, dom.hi[2], dom.hi[3]));
  BJ.relative_degree = P.jump_relative_degree;
  if (BJ.relative_degree == 2) {
    BJ.y_min = output_range(BJ.C, BJ.bounds).first;
    BJ.ydot_max = P.ydot_max;
    BJ.ydot_min = -P.ydot_max;
  }
  BJ.target_margin = P.buffer_margin;
  env.buffers = {B, BJ};
  for (const auto& b : env.buffers) validate_buffer(b, *env.automaton);
  check_disjoint(env.buffers);

  const double H = P.target_height;
  env.reward = [g, H](ModeId, const Vec&, const Vec& u, ModeId, const Vec& s) {
    const double xb = s[0] + s[2];
    const double vb = s[1] + s[3];
    const double apex = xb + (vb > 0.0 ? vb * vb / (2.0 * g) : 0.0);
    return std::min(apex, H) - 0.5 * s[2] * s[2] - 0.01 * s[3] * s[3] - 0.0005 * u[0] * u[0];
  };
  const double need = P.completion_fraction * H;
  const double window = P.completion_window;
  env.completed = [need, window](const HybridTrajectory& tr, double horizon) {
    if (tr.failed) return false;
    return max_local_apex(tr, horizon - window, vec4(1, 0, 1, 0)) >= need;
  };
  env.dt = 0.01;
  env.state_scale = Box(vec4(0, -6, -2, -5), vec4(3, 6, 2, 5));
  env.near_constraint = {"B", Box(vec4(0, 3.5, -1, -5), vec4(5, 4, 1, 5)), ModeId(0), 1.0};
  env.near_reset = {"B_J", Box(vec4(0, s1_min, -1, -5), vec4(0.77, s1_min + P.buffer_width, 1, 5)),
                    ModeId(0), 1.0};
  env.train_starts = {
      {"rho0", rho0.box, ModeId(0), 0.5},
      {"B", env.near_constraint.box, ModeId(0), 0.15},
      {"B_J", env.near_reset.box, ModeId(0), 0.15},
      {"wide", Box(vec4(0, -4, -0.5, -2), vec4(2, 4, 0.5, 2)), ModeId(0), 0.2},
  };
  return env;
}

namespace {

BufferSpec buffer_from_json(const nlohmann::json& jb, const Environment& env, std::size_t index) {
  BufferSpec b;
  b.name = value_or<std::string>(jb, "name", "buffer" + std::to_string(index));
  b.bounds = box_from_json(require(jb, "bounds"), b.name + " bounds");
  b.relative_degree = value_or<int>(jb, "relative_degree", 1);
  const auto output = value_or<std::string>(jb, "output", "constraint");
  const std::size_t k = value_or<std::size_t>(jb, "index", 0);
  if (output == "constraint") {
    if (k >= env.constraints.size()) throw ConfigError(b.name + ": constraint index out of range");
    const auto& c = env.constraints[k];
    b.C = c.C;
    b.d = c.d;
    if (c.active_modes.empty()) throw ConfigError(b.name + ": constraint has no active mode");
    b.mode = ModeId(value_or<std::size_t>(jb, "mode", c.active_modes.front().index));
  } else if (output == "jump") {
    if (k >= env.jump_constraints.size()) throw ConfigError(b.name + ": jump index out of range");
    const auto& jc = env.jump_constraints[k];
    b.C = jc.C_tilde;
    b.d = jc.d_tilde;
    b.jump = true;
    b.source_transition = jc.source_transition;
    b.mode = ModeId(value_or<std::size_t>(
        jb, "mode", env.automaton->transitions()[jc.source_transition].from_mode.index));
  } else {
    throw ConfigError(b.name + ": output must be 'constraint' or 'jump'");
  }
  b.y_min = value_or<double>(jb, "y_min", output_range(b.C, b.bounds).first);
  b.ydot_max = value_or<double>(jb, "ydot_max", 0.0);
  b.ydot_min = value_or<double>(jb, "ydot_min", -b.ydot_max);
  b.target_margin = value_or<double>(jb, "target_margin", 0.0);
  if (jb.contains("epsilon")) b.epsilon = jb.at("epsilon").get<double>();
  return b;
}

}  // namespace

Environment build_linear(const nlohmann::json& j) {
  const json& ja = require(j, "automaton");
  const json& jm = require(ja, "modes");
  const auto n = static_cast<Eigen::Index>(value_or<long>(ja, "state_dim", 0));
  const auto m = static_cast<Eigen::Index>(value_or<long>(ja, "control_dim", 0));
  std::vector<Mat> As, Bs;
  std::vector<Vec> cs;
  for (const auto& mode : jm) {
    As.push_back(mat_from_json(require(mode, "A"), "A"));
    Bs.push_back(mat_from_json(require(mode, "B"), "B"));
    cs.push_back(mode.contains("c") ? vec_from_json(mode.at("c"), "c") : Vec::Zero(n));
    if (As.back().rows() != n || As.back().cols() != n || Bs.back().rows() != n ||
        Bs.back().cols() != m || cs.back().size() != n) {
      throw ConfigError("linear mode matrices have wrong shape");
    }
  }
  DynamicsHandle f = [As, Bs, cs](ModeId q, const Vec& s, const Vec& u) -> Vec {
    return As[q.index] * s + Bs[q.index] * u + cs[q.index];
  };
  Environment env;
  env.name = "linear";
  env.automaton = std::make_shared<HybridAutomaton>(automaton_from_json(ja, f));
  for (const auto& jc : value_or<json>(j, "constraints", json::array())) {
    AffineConstraint c;
    c.C = vec_from_json(require(jc, "C"), "C").transpose();
    c.d = require(jc, "d").get<double>();
    for (auto q : value_or<std::vector<std::size_t>>(jc, "modes", {0})) c.active_modes.emplace_back(q);
    if (c.C.size() != n) throw ConfigError("constraint row has wrong dimension");
    env.constraints.push_back(std::move(c));
  }
  for (const auto& jj : value_or<json>(j, "jump_constraints", json::array())) {
    const auto t = require(jj, "transition").get<std::size_t>();
    const auto k = value_or<std::size_t>(jj, "constraint", 0);
    if (t >= env.automaton->transitions().size() || k >= env.constraints.size()) {
      throw ConfigError("jump constraint references are out of range");
    }
    auto jc = derive_jump_constraint(env.constraints[k], env.automaton->transitions()[t].reset, t);
    jc.relative_degree = value_or<int>(jj, "relative_degree", 1);
    env.jump_constraints.push_back(jc);
  }
  const auto buffers = value_or<json>(j, "buffers", json::array());
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    env.buffers.push_back(buffer_from_json(buffers[i], env, i));
    validate_buffer(env.buffers.back(), *env.automaton);
  }
  check_disjoint(env.buffers);

  const Vec target = j.contains("target") ? vec_from_json(j.at("target"), "target") : Vec::Zero(n);
  if (target.size() != n) throw ConfigError("target has wrong dimension");
  env.reward = [target](ModeId, const Vec&, const Vec& u, ModeId, const Vec& s) {
    return -(s - target).squaredNorm() - 0.001 * u.squaredNorm();
  };
  env.completed = [](const HybridTrajectory& tr, double) { return !tr.failed; };
  env.dt = value_or<double>(j, "dt", 0.01);
  env.state_scale = j.contains("state_scale") ? box_from_json(j.at("state_scale"), "state_scale")
                                              : env.automaton->mode(ModeId(0)).domain;
  const auto& rho = env.automaton->initial_distribution();
  env.train_starts = {{"rho0", rho.box, rho.mode, 1.0}};
  env.near_constraint = env.buffers.empty() ? env.train_starts[0]
                                            : StartRegion{"near", env.buffers[0].bounds, env.buffers[0].mode, 1.0};
  env.near_reset = env.near_constraint;
  for (const auto& b : env.buffers) {
    if (b.jump) {
      env.near_reset = {"near_reset", b.bounds, b.mode, 1.0};
      break;
    }
  }
  return env;
}

Environment build_environment(const nlohmann::json& j) {
  const auto kind = value_or<std::string>(j, "env", "");
  const json params = value_or<json>(j, "params", json::object());
  if (kind == "pendulum") return build_pendulum(pendulum_params_from_json(params));
  if (kind == "juggler") return build_juggler(juggler_params_from_json(params));
  if (kind == "linear") return build_linear(j);
  throw ConfigError("unknown env '" + kind + "' (expected pendulum, juggler or linear)");
}

std::pair<ModeId, Vec> sample_region(const HybridAutomaton& automaton, const StartRegion& region,
                                     std::mt19937_64& rng) {
  Vec s(region.box.dim());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    std::uniform_real_distribution<double> dist(region.box.lo[i], region.box.hi[i]);
    s[i] = region.box.lo[i] == region.box.hi[i] ? region.box.lo[i] : dist(rng);
  }
  return {automaton.locate(s, region.mode), s};
}

ViolationCheck first_violation(const Environment& env, const HybridTrajectory& traj, double tol) {
  std::size_t event = 0;
  for (const auto& smp : traj.samples) {
    for (const auto& c : env.constraints) {
      if (c.active_in(smp.mode) && !c.satisfied(smp.state, tol)) return {true, smp.time};
    }
    if (smp.kind == SampleKind::pre_event) {
      if (event < traj.events.size()) {
        for (const auto& jc : env.jump_constraints) {
          if (jc.source_transition == traj.events[event].transition && !jc.satisfied(smp.state, tol)) {
            return {true, smp.time};
          }
        }
      }
      ++event;
    }
  }
  if (traj.failed) return {true, traj.failure_time};
  return {false, 0.0};
}

double max_local_apex(const HybridTrajectory& traj, double t0, const Vec& weights) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<const Sample*> regular;
  for (const auto& smp : traj.samples) {
    if (smp.kind == SampleKind::regular) regular.push_back(&smp);
  }
  for (std::size_t i = 1; i + 1 < regular.size(); ++i) {
    if (regular[i]->time < t0) continue;
    const double y = weights.dot(regular[i]->state);
    if (y >= weights.dot(regular[i - 1]->state) && y > weights.dot(regular[i + 1]->state)) {
      best = std::max(best, y);
    }
  }
  return best;
}

}  // namespace hsrl
