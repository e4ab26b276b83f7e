#include "hsrl/environments.hpp"
#include "hsrl/verifier.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

using namespace hsrl;
using namespace hsrl::test;

namespace {

// Double integrator: position y = s0, velocity s1, acceleration u.
HybridAutomaton double_integrator(double u_max = 20.0) {
  Mat A(2, 2);
  A << 0.0, 1.0, 0.0, 0.0;
  Mat B(2, 1);
  B << 0.0, 1.0;
  return linear_system(A, B, Vec::Zero(2), 100.0, u_max);
}

BufferSpec di_buffer() {
  BufferSpec b;
  b.name = "BJ";
  b.mode = ModeId(0);
  b.C = RowVec(vec({1.0, 0.0}).transpose());
  b.d = 1.0;
  b.bounds = box({{0.5, 1.0}, {-2.0, 2.0}});
  b.relative_degree = 2;
  b.y_min = 0.5;
  b.ydot_max = 2.0;
  return b;
}

}  // namespace

TEST(Degree1, SingleIntegratorMargins) {
  Mat A = Mat::Zero(1, 1), B = Mat::Ones(1, 1);
  const HybridAutomaton H = linear_system(A, B, Vec::Zero(1));
  BufferSpec b;
  b.name = "B";
  b.mode = ModeId(0);
  b.C = RowVec(vec({1.0}).transpose());
  b.d = 1.0;
  b.bounds = box({{0.5, 1.0}});
  const StateLaw law = [](const Vec&) { return vec({-1.0}); };
  auto checks = check_degree1(H.dynamics_handle(), ModeId(0), b, b.C, law, 0.0);
  ASSERT_EQ(checks.size(), 2u);
  for (const auto& c : checks) {
    EXPECT_DOUBLE_EQ(c.lhs, -1.0);
    EXPECT_DOUBLE_EQ(c.margin, 1.0);
    EXPECT_TRUE(c.satisfied);
  }
  checks = check_degree1(H.dynamics_handle(), ModeId(0), b, b.C, law, 0.6);
  for (const auto& c : checks) {
    EXPECT_DOUBLE_EQ(c.rhs, -1.2);
    EXPECT_NEAR(c.margin, -0.2, 1e-15);
    EXPECT_FALSE(c.satisfied);
  }
}

TEST(Degree1, AffineSystemAgainstHandOracle) {
  Mat A(2, 2);
  A << 0.0, 1.0, -2.0, -0.5;
  Mat B(2, 1);
  B << 0.0, 1.0;
  const HybridAutomaton H = linear_system(A, B, vec({0.0, 0.3}));
  BufferSpec b;
  b.name = "B";
  b.mode = ModeId(0);
  b.C = RowVec(vec({0.0, 1.0}).transpose());
  b.d = 3.0;
  b.bounds = box({{-1.0, 1.0}, {2.5, 3.0}});
  AffineActor actor{Mat(1, 2), vec({-4.0})};
  actor.D << 1.0, -2.0;
  const auto checks = check_degree1(H.dynamics_handle(), ModeId(0), b, b.C,
                                    [&](const Vec& s) { return actor.pre_clamp(s); }, 0.25);
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& c : checks) {
    const double x = c.vertex[0], v = c.vertex[1];
    const double u = x - 2.0 * v - 4.0;
    const double expect = -2.0 * x - 0.5 * v + 0.3 + u;
    EXPECT_NEAR(c.lhs, expect, 1e-12);
    EXPECT_NEAR(c.margin, -0.5 - expect, 1e-12);
    EXPECT_NEAR(c.control[0], u, 1e-12);
  }
}

TEST(Degree2, DoubleIntegratorClosedLoop) {
  const HybridAutomaton H = double_integrator();
  const BufferSpec b = di_buffer();
  EXPECT_DOUBLE_EQ(beta(b), 4.0);
  // u = -4 v - 1 gives ydd + beta yd = -1 everywhere: margin 1 at each vertex.
  AffineActor actor{Mat(1, 2), vec({-1.0})};
  actor.D << 0.0, -4.0;
  const auto checks = check_degree2(H.dynamics_handle(), ModeId(0), b, b.C,
                                    [&](const Vec& s) { return actor.pre_clamp(s); }, 0.0, 4.0);
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& c : checks) {
    EXPECT_NEAR(c.ydot, c.vertex[1], 1e-12);
    EXPECT_NEAR(c.lhs, -4.0 * c.vertex[1] - 1.0, 1e-6);
    EXPECT_NEAR(c.margin, 1.0, 1e-6);
    EXPECT_TRUE(c.satisfied);
  }
  // A weaker damping gain fails at the fast vertices.
  actor.D << 0.0, -3.0;
  const auto weak = check_degree2(H.dynamics_handle(), ModeId(0), b, b.C,
                                  [&](const Vec& s) { return actor.pre_clamp(s); }, 0.0, 4.0);
  int failed = 0;
  for (const auto& c : weak) failed += c.satisfied ? 0 : 1;
  EXPECT_EQ(failed, 2);
}

TEST(Degree2, ClosedLoopDerivativeOfNonlinearSystem) {
  // y = s0, s0' = s1, s1' = -sin(s0) + u, u = k s1: ydd = -sin(s0) + k s1.
  const DynamicsHandle f = [](ModeId, const Vec& s, const Vec& u) -> Vec {
    return vec({s[1], -std::sin(s[0]) + u[0]});
  };
  const StateLaw law = [](const Vec& s) { return vec({-0.7 * s[1]}); };
  const RowVec C = RowVec(vec({0.0, 1.0}).transpose());
  // Here the output is the velocity, so ydd = d/dt(-sin s0 - 0.7 s1).
  const Vec s = vec({0.4, 1.3});
  const double sdot1 = -std::sin(0.4) - 0.7 * 1.3;
  const double expect = -std::cos(0.4) * 1.3 - 0.7 * sdot1;
  EXPECT_NEAR(closed_loop_second_derivative(f, ModeId(0), C, law, s, 1e-4), expect, 1e-7);
}

TEST(Degree2, UnresolvedDerivativeRaisesStepTooLarge) {
  const DynamicsHandle f = [](ModeId, const Vec& s, const Vec& u) -> Vec {
    return vec({s[1], -std::sin(8.0 * s[0]) + u[0]});
  };
  const BufferSpec b = di_buffer();
  Degree2Options opt;
  opt.h = 0.5;
  EXPECT_THROW(check_degree2(f, ModeId(0), b, b.C, [](const Vec&) { return vec({0.0}); }, 0.0, 4.0, opt),
               StepTooLarge);
}

TEST(CheckBuffer, ControlsOutsideBoundsFail) {
  const HybridAutomaton H = double_integrator(5.0);
  const BufferSpec b = di_buffer();
  AffineActor actor{Mat(1, 2), vec({-1.0})};
  actor.D << 0.0, -4.0;  // |u| reaches 9 > 5
  ApproximationMeasure m;
  const BufferCertificate bc = check_buffer(H, b, actor, m);
  EXPECT_EQ(bc.satisfied_fraction, 1.0);
  EXPECT_FALSE(bc.controls_within_bounds);
  EXPECT_FALSE(bc.satisfied);
  EXPECT_NEAR(bc.worst_margin, 1.0, 1e-6);
}

TEST(CheckBuffer, ErrorsNameTheBuffer) {
  const DynamicsHandle f = [](ModeId, const Vec& s, const Vec&) -> Vec { return s / 0.0; };
  const Box dom = box({{-10, 10}, {-10, 10}});
  HybridAutomaton H(2, 1, {Mode{ModeId(0), "a", dom}}, f, {}, box({{-1, 1}}), {dom, ModeId(0)});
  BufferSpec b = di_buffer();
  b.name = "named-buffer";
  try {
    check_buffer(H, b, AffineActor{Mat::Zero(1, 2), vec({0.0})}, ApproximationMeasure{});
    FAIL() << "expected NonFiniteDynamics";
  } catch (const NonFiniteDynamics& e) {
    EXPECT_NE(std::string(e.what()).find("named-buffer"), std::string::npos);
  }
}

TEST(Certify, NoBuffersIsNotCertified) {
  const HybridAutomaton H = double_integrator();
  SwitchedPolicy pi({}, MlpActor(box({{-1, 1}, {-1, 1}}), H.control_bounds(), {4}));
  const SafetyCertificate c = certify(H, pi, {});
  EXPECT_FALSE(c.overall);
  EXPECT_TRUE(c.buffers.empty());
}

TEST(Certify, OverallNeedsEveryBuffer) {
  const HybridAutomaton H = double_integrator(50.0);
  BufferSpec low = di_buffer();
  BufferSpec high = di_buffer();
  high.name = "other";
  high.bounds = box({{0.5, 1.0}, {2.0, 4.0}});
  high.ydot_max = 4.0;
  SwitchedPolicy pi({low, high}, MlpActor(box({{-1, 1}, {-1, 1}}), H.control_bounds(), {4}));
  pi.affine()[0] = AffineActor{Mat(1, 2), vec({-1.0})};
  pi.affine()[0].D << 0.0, -4.0;
  pi.affine()[1] = AffineActor{Mat::Zero(1, 2), vec({0.0})};
  const auto measures = estimate_measures(H, pi.buffers(), {});
  ASSERT_EQ(measures.size(), 2u);
  EXPECT_LE(measures[0].epsilon, 1e-8);
  const SafetyCertificate c = certify(H, pi, measures);
  EXPECT_TRUE(c.buffers[0].satisfied);
  EXPECT_FALSE(c.buffers[1].satisfied);
  EXPECT_FALSE(c.overall);
  pi.affine()[1] = AffineActor{Mat(1, 2), vec({-1.0})};
  pi.affine()[1].D << 0.0, -8.0;  // beta = 4 / 0.5
  EXPECT_TRUE(certify(H, pi, measures).overall);
}

TEST(Certify, EpsilonOverrideSkipsEstimation) {
  const HybridAutomaton H = double_integrator();
  BufferSpec b = di_buffer();
  b.epsilon = 0.125;
  const auto m = estimate_measures(H, {b}, {});
  EXPECT_EQ(m[0].epsilon, 0.125);
  EXPECT_EQ(m[0].sample_count, 0u);
}

TEST(Certificate, TimestampHonoursSourceDateEpoch) {
  setenv("SOURCE_DATE_EPOCH", "86400", 1);
  EXPECT_EQ(certificate_timestamp(), "1970-01-02T00:00:00Z");
  unsetenv("SOURCE_DATE_EPOCH");
  EXPECT_EQ(certificate_timestamp().size(), 20u);
}

TEST(Certificate, JsonCarriesEveryVertex) {
  const HybridAutomaton H = double_integrator();
  SwitchedPolicy pi({di_buffer()}, MlpActor(box({{-1, 1}, {-1, 1}}), H.control_bounds(), {4}));
  pi.affine()[0] = AffineActor{Mat(1, 2), vec({-1.0})};
  pi.affine()[0].D << 0.0, -4.0;
  SafetyCertificate c = certify(H, pi, estimate_measures(H, pi.buffers(), {}));
  c.config_hash = "abc";
  const auto j = certificate_to_json(c);
  EXPECT_EQ(j["overall"], true);
  EXPECT_EQ(j["config_hash"], "abc");
  ASSERT_EQ(j["buffers"].size(), 1u);
  EXPECT_EQ(j["buffers"][0]["vertices"].size(), 4u);
  EXPECT_EQ(j["buffers"][0]["beta"], 4.0);
  EXPECT_TRUE(j["buffers"][0]["approximation"].contains("epsilon"));
}
