#include "hsrl/verifier.hpp"

#include "hsrl/json_io.hpp"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <limits>

namespace hsrl {

namespace {

Vec eval_f(const DynamicsHandle& f, ModeId q, const Vec& s, const Vec& u) {
  Vec out = f(q, s, u);
  if (!out.allFinite()) throw NonFiniteDynamics("dynamics returned non-finite values");
  return out;
}

Vec closed_loop_rk4(const DynamicsHandle& f, ModeId q, const StateLaw& pi, const Vec& s, double h) {
  auto F = [&](const Vec& x) { return eval_f(f, q, x, pi(x)); };
  const Vec k1 = F(s);
  const Vec k2 = F(s + 0.5 * h * k1);
  const Vec k3 = F(s + 0.5 * h * k2);
  const Vec k4 = F(s + h * k3);
  return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::string tagged(const BufferSpec& b, const std::exception& e) {
  return "buffer '" + b.name + "': " + e.what();
}

}  // namespace

std::vector<VertexCheck> check_degree1(const DynamicsHandle& dynamics, ModeId mode,
                                       const BufferSpec& buffer, const RowVec& output_row,
                                       const StateLaw& policy, double epsilon) {
  std::vector<VertexCheck> out;
  for (const Vec& v : vertices(buffer)) {
    VertexCheck c;
    c.vertex = v;
    c.control = policy(v);
    c.lhs = output_row.dot(eval_f(dynamics, mode, v, c.control));
    c.ydot = c.lhs;
    c.rhs = -2.0 * epsilon;
    c.margin = c.rhs - c.lhs;
    c.satisfied = c.margin >= 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

double closed_loop_second_derivative(const DynamicsHandle& dynamics, ModeId mode,
                                     const RowVec& output_row, const StateLaw& policy,
                                     const Vec& s, double h) {
  const Vec fwd = closed_loop_rk4(dynamics, mode, policy, s, h);
  const Vec bwd = closed_loop_rk4(dynamics, mode, policy, s, -h);
  const double yf = output_row.dot(eval_f(dynamics, mode, fwd, policy(fwd)));
  const double yb = output_row.dot(eval_f(dynamics, mode, bwd, policy(bwd)));
  return (yf - yb) / (2.0 * h);
}

std::vector<VertexCheck> check_degree2(const DynamicsHandle& dynamics, ModeId mode,
                                       const BufferSpec& buffer, const RowVec& output_row,
                                       const StateLaw& policy, double epsilon2, double beta,
                                       const Degree2Options& options) {
  std::vector<VertexCheck> out;
  for (const Vec& v : vertices(buffer)) {
    VertexCheck c;
    c.vertex = v;
    c.control = policy(v);
    c.ydot = output_row.dot(eval_f(dynamics, mode, v, c.control));
    const double coarse =
        closed_loop_second_derivative(dynamics, mode, output_row, policy, v, options.h);
    const double fine =
        closed_loop_second_derivative(dynamics, mode, output_row, policy, v, 0.5 * options.h);
    if (std::abs(coarse - fine) > options.refinement_rtol * std::abs(fine) + options.refinement_atol) {
      throw StepTooLarge(buffer.name + ": second-derivative estimate not converged at a vertex");
    }
    c.lhs = fine;
    c.rhs = -2.0 * epsilon2 - beta * c.ydot;
    c.margin = c.rhs - c.lhs;
    c.satisfied = c.margin >= 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ApproximationMeasure> estimate_measures(const HybridAutomaton& automaton,
                                                    const std::vector<BufferSpec>& buffers,
                                                    const EstimationOptions& options) {
  std::vector<ApproximationMeasure> out;
  for (const auto& b : buffers) {
    if (b.epsilon) {
      ApproximationMeasure m;
      m.epsilon = *b.epsilon;
      m.derivative_order = b.relative_degree;
      m.margin_factor = 1.0;
      out.push_back(std::move(m));
      continue;
    }
    EstimationOptions o = options;
    o.order = b.relative_degree;
    out.push_back(estimate_epsilon(automaton.dynamics_handle(), b.mode, b, b.C,
                                   automaton.control_bounds(), o));
  }
  return out;
}

BufferCertificate check_buffer(const HybridAutomaton& automaton, const BufferSpec& buffer,
                               const AffineActor& actor, const ApproximationMeasure& measure,
                               const VerifierOptions& options) {
  BufferCertificate bc;
  bc.name = buffer.name;
  bc.mode = buffer.mode;
  bc.relative_degree = buffer.relative_degree;
  bc.measure = measure;
  const StateLaw law = [&actor](const Vec& s) { return actor.pre_clamp(s); };
  try {
    if (buffer.relative_degree == 1) {
      bc.checks = check_degree1(automaton.dynamics_handle(), buffer.mode, buffer, buffer.C, law,
                                measure.epsilon);
    } else {
      bc.beta = beta(buffer);
      bc.checks = check_degree2(automaton.dynamics_handle(), buffer.mode, buffer, buffer.C, law,
                                measure.epsilon, bc.beta, options.degree2);
    }
  } catch (const StepTooLarge& e) {
    throw StepTooLarge(tagged(buffer, e));
  } catch (const NonFiniteDynamics& e) {
    throw NonFiniteDynamics(tagged(buffer, e));
  } catch (const InvalidBuffer& e) {
    throw InvalidBuffer(tagged(buffer, e));
  }
  bc.controls_within_bounds = true;
  bc.worst_margin = std::numeric_limits<double>::infinity();
  std::size_t ok = 0;
  for (const auto& c : bc.checks) {
    if (!automaton.control_bounds().contains(c.control)) bc.controls_within_bounds = false;
    bc.worst_margin = std::min(bc.worst_margin, c.margin);
    ok += c.satisfied ? 1 : 0;
  }
  bc.satisfied_fraction = bc.checks.empty() ? 0.0 : static_cast<double>(ok) / bc.checks.size();
  bc.satisfied = !bc.checks.empty() && ok == bc.checks.size() && bc.controls_within_bounds;
  return bc;
}

SafetyCertificate certify(const HybridAutomaton& automaton, const SwitchedPolicy& policy,
                          const std::vector<ApproximationMeasure>& measures,
                          const VerifierOptions& options) {
  SafetyCertificate cert;
  const auto& buffers = policy.buffers();
  if (measures.size() != buffers.size()) throw ConfigError("one measure per buffer required");
  if (buffers.empty()) {
    cert.overall = false;
    cert.status = "no buffers configured: nothing certified";
    return cert;
  }
  bool all = true;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    cert.buffers.push_back(check_buffer(automaton, buffers[i], policy.affine()[i], measures[i], options));
    if (!cert.buffers.back().satisfied) {
      all = false;
      ++failed;
    }
  }
  cert.overall = all;
  cert.status = all ? "all vertex conditions hold"
                    : std::to_string(failed) + " of " + std::to_string(buffers.size()) +
                          " buffers fail their vertex conditions";
  return cert;
}

std::string certificate_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && *end == '\0') t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json certificate_to_json(const SafetyCertificate& cert) {
  nlohmann::json j;
  j["format"] = "hsrl-certificate-1";
  j["overall"] = cert.overall;
  j["status"] = cert.status;
  j["config_hash"] = cert.config_hash;
  j["timestamp"] = cert.timestamp;
  j["buffers"] = nlohmann::json::array();
  for (const auto& b : cert.buffers) {
    nlohmann::json jb;
    jb["name"] = b.name;
    jb["mode"] = b.mode.index;
    jb["relative_degree"] = b.relative_degree;
    jb["approximation"] = measure_to_json(b.measure);
    if (b.relative_degree == 2) jb["beta"] = b.beta;
    jb["controls_within_bounds"] = b.controls_within_bounds;
    jb["satisfied"] = b.satisfied;
    jb["worst_margin"] = b.worst_margin;
    jb["satisfied_fraction"] = b.satisfied_fraction;
    jb["vertices"] = nlohmann::json::array();
    for (const auto& c : b.checks) {
      jb["vertices"].push_back({{"vertex", vec_to_json(c.vertex)},
                                {"control", vec_to_json(c.control)},
                                {"lhs", c.lhs},
                                {"rhs", c.rhs},
                                {"margin", c.margin},
                                {"ydot", c.ydot},
                                {"satisfied", c.satisfied}});
    }
    j["buffers"].push_back(std::move(jb));
  }
  return j;
}

}  // namespace hsrl
