#ifndef HSRL_GEOMETRY_HPP
#define HSRL_GEOMETRY_HPP

#include "hsrl/hybrid.hpp"
#include "hsrl/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hsrl {

/// C s <= d on the listed modes.
struct AffineConstraint {
  RowVec C;
  double d = 0.0;
  std::vector<ModeId> active_modes;

  bool active_in(ModeId q) const;
  double output(const Vec& s) const { return C.dot(s); }
  bool satisfied(const Vec& s, double tol = 0.0) const { return output(s) <= d + tol; }
};

/// Pre-reset constraint whose satisfaction keeps the post-reset state safe.
struct JumpConstraint {
  RowVec C_tilde;
  double d_tilde = 0.0;
  std::size_t source_transition = 0;
  int relative_degree = 1;

  bool satisfied(const Vec& s, double tol = 0.0) const { return C_tilde.dot(s) <= d_tilde + tol; }
};

JumpConstraint derive_jump_constraint(const AffineConstraint& constraint,
                                      const AffineResetMap& reset,
                                      std::size_t source_transition = 0);

/// Box-shaped repulsive buffer in one mode, adjacent to the level set C s = d
/// of the output it protects (a constraint or a jump constraint).
struct BufferSpec {
  std::string name;
  ModeId mode;
  RowVec C;
  double d = 0.0;
  bool jump = false;
  std::size_t source_transition = 0;
  Box bounds;
  int relative_degree = 1;
  // Degree-2 data. y_min defaults to the minimum of C s over the box.
  double y_min = 0.0;
  double ydot_max = 0.0;
  double ydot_min = 0.0;
  // Required certificate margin during training (robustness slack).
  double target_margin = 0.0;
  // Known approximation measure; skips estimation when set.
  std::optional<double> epsilon;

  double output(const Vec& s) const { return C.dot(s); }
};

bool membership(const BufferSpec& buffer, const Vec& state);

/// Distinct corners of a box (2^k for k non-degenerate coordinates).
std::vector<Vec> vertices(const Box& box);
std::vector<Vec> vertices(const BufferSpec& buffer);

/// Range of the linear output c s over a box.
std::pair<double, double> output_range(const RowVec& c, const Box& box);

/// ydot_max / (d - y_min); InvalidBuffer if d <= y_min or ydot_max <= 0.
double beta(const BufferSpec& buffer);

/// Checks shape invariants; throws InvalidBuffer with the buffer name.
void validate_buffer(const BufferSpec& buffer, const HybridAutomaton& automaton);

/// Rejects buffers of the same mode whose interiors intersect.
void check_disjoint(const std::vector<BufferSpec>& buffers);

}  // namespace hsrl

#endif  // HSRL_GEOMETRY_HPP
