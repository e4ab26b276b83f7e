#ifndef HSRL_TEST_FIXTURES_HPP
#define HSRL_TEST_FIXTURES_HPP

#include "hsrl/hybrid.hpp"

#include <memory>

namespace hsrl::test {

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

inline Box box(std::initializer_list<std::pair<double, double>> ranges) {
  Vec lo(static_cast<Eigen::Index>(ranges.size())), hi(lo.size());
  Eigen::Index i = 0;
  for (auto [a, b] : ranges) {
    lo[i] = a;
    hi[i] = b;
    ++i;
  }
  return Box(lo, hi);
}

/// Single-mode s' = A s + B u + c on a large box, no transitions.
inline HybridAutomaton linear_system(const Mat& A, const Mat& B, const Vec& c, double extent = 1e3,
                                     double u_max = 1e3) {
  const Eigen::Index n = A.rows(), m = B.cols();
  Box dom(Vec::Constant(n, -extent), Vec::Constant(n, extent));
  Box ub(Vec::Constant(m, -u_max), Vec::Constant(m, u_max));
  return HybridAutomaton(n, m, {Mode{ModeId(0), "q", dom}},
                         [A, B, c](ModeId, const Vec& s, const Vec& u) -> Vec { return A * s + B * u + c; },
                         {}, ub, InitialDistribution{dom, ModeId(0)});
}

/// Ball over a floor at height 0 with restitution e; state (height, velocity),
/// control is an extra vertical acceleration.
inline HybridAutomaton bouncing_ball(double e = 0.8, double g = 9.81) {
  Box dom = box({{-1e-6, 100.0}, {-100.0, 100.0}});
  GuardedTransition bounce;
  bounce.from_mode = ModeId(0);
  bounce.to_mode = ModeId(0);
  bounce.guard_normal = vec({1.0, 0.0});
  bounce.guard_offset = 0.0;
  bounce.crossing_direction = CrossingDirection::decreasing;
  bounce.reset.M = Mat::Zero(2, 2);
  bounce.reset.M(1, 1) = -e;
  bounce.reset.p = Vec::Zero(2);
  return HybridAutomaton(
      2, 1, {Mode{ModeId(0), "air", dom}},
      [g](ModeId, const Vec& s, const Vec& u) -> Vec { return vec({s[1], -g + u[0]}); }, {bounce},
      box({{-20.0, 20.0}}), InitialDistribution{box({{1.0, 2.0}, {0.0, 0.0}}), ModeId(0)});
}

inline FeedbackLaw constant_law(const Vec& u) {
  return [u](ModeId, const Vec&) { return u; };
}

}  // namespace hsrl::test

#endif  // HSRL_TEST_FIXTURES_HPP
