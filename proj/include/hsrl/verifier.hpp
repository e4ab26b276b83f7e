#ifndef HSRL_VERIFIER_HPP
#define HSRL_VERIFIER_HPP

// Vertex certificates for affine actors: the repulsion condition for
// relative-degree-1 buffers and the dissipation condition for degree 2.

#include "hsrl/estimation.hpp"
#include "hsrl/policy.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace hsrl {

/// Pre-clamp closed-loop law used by the vertex checks.
using StateLaw = std::function<Vec(const Vec&)>;

struct VertexCheck {
  Vec vertex;
  Vec control;      // pre-clamp action at the vertex
  double lhs = 0.0; // C f(v, pi(v)) or the second output derivative
  double rhs = 0.0; // -2 eps, or -2 eps - beta ydot(v)
  double margin = 0.0;
  double ydot = 0.0;
  bool satisfied = false;
};

std::vector<VertexCheck> check_degree1(const DynamicsHandle& dynamics, ModeId mode,
                                       const BufferSpec& buffer, const RowVec& output_row,
                                       const StateLaw& policy, double epsilon);

struct Degree2Options {
  double h = 1e-4;
  double refinement_rtol = 1e-3;
  double refinement_atol = 1e-6;
};

/// Second output derivative along the closed loop at s, by central differences
/// of ydot over one RK4 micro-step forward and back.
double closed_loop_second_derivative(const DynamicsHandle& dynamics, ModeId mode,
                                     const RowVec& output_row, const StateLaw& policy,
                                     const Vec& s, double h);

std::vector<VertexCheck> check_degree2(const DynamicsHandle& dynamics, ModeId mode,
                                       const BufferSpec& buffer, const RowVec& output_row,
                                       const StateLaw& policy, double epsilon2, double beta,
                                       const Degree2Options& options = {});

struct BufferCertificate {
  std::string name;
  ModeId mode;
  int relative_degree = 1;
  ApproximationMeasure measure;
  double beta = 0.0;
  std::vector<VertexCheck> checks;
  bool controls_within_bounds = false;
  bool satisfied = false;
  double worst_margin = 0.0;
  double satisfied_fraction = 0.0;
};

struct SafetyCertificate {
  std::vector<BufferCertificate> buffers;
  bool overall = false;
  std::string status;
  std::string config_hash;
  std::string timestamp;
};

struct VerifierOptions {
  EstimationOptions estimation;
  Degree2Options degree2;
};

/// Measure for each buffer (estimated, or taken from the buffer's epsilon).
std::vector<ApproximationMeasure> estimate_measures(const HybridAutomaton& automaton,
                                                    const std::vector<BufferSpec>& buffers,
                                                    const EstimationOptions& options);

BufferCertificate check_buffer(const HybridAutomaton& automaton, const BufferSpec& buffer,
                               const AffineActor& actor, const ApproximationMeasure& measure,
                               const VerifierOptions& options = {});

SafetyCertificate certify(const HybridAutomaton& automaton, const SwitchedPolicy& policy,
                          const std::vector<ApproximationMeasure>& measures,
                          const VerifierOptions& options = {});

/// UTC ISO-8601 time from SOURCE_DATE_EPOCH when set, else the current time.
std::string certificate_timestamp();

nlohmann::json certificate_to_json(const SafetyCertificate& cert);

}  // namespace hsrl

#endif  // HSRL_VERIFIER_HPP
