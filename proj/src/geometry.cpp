#include "hsrl/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace hsrl {

bool AffineConstraint::active_in(ModeId q) const {
  return std::find(active_modes.begin(), active_modes.end(), q) != active_modes.end();
}

JumpConstraint derive_jump_constraint(const AffineConstraint& constraint,
                                      const AffineResetMap& reset,
                                      std::size_t source_transition) {
  const Eigen::Index n = constraint.C.size();
  if (reset.M.rows() != n || reset.M.cols() != n || reset.p.size() != n) {
    throw ConfigError("constraint and reset map dimensions differ");
  }
  JumpConstraint jc;
  jc.C_tilde = constraint.C * reset.M;
  jc.d_tilde = constraint.d - constraint.C.dot(reset.p);
  jc.source_transition = source_transition;
  if (jc.C_tilde.isZero(0.0)) {
    throw DegenerateConstraint("reset annihilates the constrained output (C M = 0)");
  }
  return jc;
}

bool membership(const BufferSpec& buffer, const Vec& state) {
  return buffer.bounds.contains(state);
}

std::vector<Vec> vertices(const Box& box) {
  const Eigen::Index n = box.dim();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (box.lo[i] != box.hi[i]) free.push_back(i);
  }
  std::vector<Vec> out;
  const std::size_t count = std::size_t{1} << free.size();
  out.reserve(count);
  for (std::size_t mask = 0; mask < count; ++mask) {
    Vec v = box.lo;
    for (std::size_t b = 0; b < free.size(); ++b) {
      if (mask & (std::size_t{1} << b)) v[free[b]] = box.hi[free[b]];
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Vec> vertices(const BufferSpec& buffer) { return vertices(buffer.bounds); }

std::pair<double, double> output_range(const RowVec& c, const Box& box) {
  double lo = 0.0;
  double hi = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double a = c[i] * box.lo[i];
    const double b = c[i] * box.hi[i];
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  return {lo, hi};
}

double beta(const BufferSpec& buffer) {
  if (buffer.relative_degree != 2) throw InvalidBuffer(buffer.name + ": beta needs relative degree 2");
  if (!(buffer.d > buffer.y_min)) {
    throw InvalidBuffer(buffer.name + ": d must exceed y_min for a finite dissipation rate");
  }
  if (!(buffer.ydot_max > 0.0)) throw InvalidBuffer(buffer.name + ": ydot_max must be positive");
  return buffer.ydot_max / (buffer.d - buffer.y_min);
}

void validate_buffer(const BufferSpec& buffer, const HybridAutomaton& automaton) {
  const std::string& id = buffer.name;
  if (buffer.mode.index >= automaton.modes().size()) throw InvalidBuffer(id + ": unknown mode");
  if (buffer.bounds.dim() != automaton.state_dim() || buffer.C.size() != automaton.state_dim()) {
    throw InvalidBuffer(id + ": dimension mismatch");
  }
  if (buffer.C.isZero(0.0)) throw InvalidBuffer(id + ": zero output row");
  if (buffer.relative_degree != 1 && buffer.relative_degree != 2) {
    throw InvalidBuffer(id + ": relative degree must be 1 or 2");
  }
  const Box& dom = automaton.mode(buffer.mode).domain;
  if (!dom.contains(buffer.bounds.lo, 1e-9) || !dom.contains(buffer.bounds.hi, 1e-9)) {
    throw InvalidBuffer(id + ": box leaves the mode domain");
  }
  const auto [ylo, yhi] = output_range(buffer.C, buffer.bounds);
  if (std::abs(yhi - buffer.d) > 1e-9 * std::max(1.0, std::abs(buffer.d))) {
    throw InvalidBuffer(id + ": box must touch the constraint level (max output != d)");
  }
  if (!(yhi - ylo > 0.0)) throw InvalidBuffer(id + ": zero width along the output");
  if (buffer.relative_degree == 2) {
    if (buffer.y_min < ylo - 1e-9) throw InvalidBuffer(id + ": y_min below the box output range");
    (void)beta(buffer);
  }
}

void check_disjoint(const std::vector<BufferSpec>& buffers) {
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    for (std::size_t j = i + 1; j < buffers.size(); ++j) {
      const auto& a = buffers[i];
      const auto& b = buffers[j];
      if (a.mode != b.mode) continue;
      const bool interior_overlap =
          ((a.bounds.lo.cwiseMax(b.bounds.lo).array()) < (a.bounds.hi.cwiseMin(b.bounds.hi).array())).all();
      if (interior_overlap) {
        throw InvalidBuffer("buffers '" + a.name + "' and '" + b.name + "' overlap");
      }
    }
  }
}

}  // namespace hsrl
