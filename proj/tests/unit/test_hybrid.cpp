#include "hsrl/environments.hpp"
#include "hsrl/hybrid.hpp"
#include "hsrl/json_io.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace hsrl;
using namespace hsrl::test;

namespace {

double decay_error(double dt) {
  Mat A(1, 1);
  A << -1.0;
  const HybridAutomaton H = linear_system(A, Mat::Zero(1, 1), Vec::Zero(1));
  Vec s = vec({1.0});
  const int n = static_cast<int>(std::lround(1.0 / dt));
  for (int k = 0; k < n; ++k) s = rk4(H, ModeId(0), s, Vec::Zero(1), dt);
  return std::abs(s[0] - std::exp(-1.0));
}

}  // namespace

TEST(Rk4, FourthOrderConvergence) {
  const double e1 = decay_error(0.1);
  const double e2 = decay_error(0.05);
  EXPECT_NEAR(std::log2(e1 / e2), 4.0, 0.1);
}

TEST(Rk4, ExactForConstantAcceleration) {
  const HybridAutomaton H = bouncing_ball();
  const Vec s = rk4(H, ModeId(0), vec({5.0, 1.0}), vec({0.0}), 0.3);
  EXPECT_NEAR(s[0], 5.0 + 0.3 - 0.5 * 9.81 * 0.09, 1e-12);
  EXPECT_NEAR(s[1], 1.0 - 9.81 * 0.3, 1e-12);
}

TEST(Automaton, RejectsBadConstruction) {
  const Box dom = box({{0.0, 1.0}});
  auto f = [](ModeId, const Vec& s, const Vec&) -> Vec { return s; };
  EXPECT_THROW(HybridAutomaton(1, 1, {}, f, {}, box({{-1.0, 1.0}}), {dom, ModeId(0)}), ConfigError);
  GuardedTransition bad;
  bad.from_mode = ModeId(0);
  bad.to_mode = ModeId(3);
  bad.guard_normal = vec({1.0});
  bad.reset = AffineResetMap::identity(1);
  EXPECT_THROW(HybridAutomaton(1, 1, {Mode{ModeId(0), "a", dom}}, f, {bad}, box({{-1.0, 1.0}}),
                               {dom, ModeId(0)}),
               ConfigError);
}

TEST(Automaton, NonFiniteDynamicsRaises) {
  auto f = [](ModeId, const Vec& s, const Vec&) -> Vec { return s / 0.0; };
  const Box dom = box({{-1.0, 1.0}});
  HybridAutomaton H(1, 1, {Mode{ModeId(0), "a", dom}}, f, {}, box({{-1.0, 1.0}}), {dom, ModeId(0)});
  EXPECT_THROW(H.dynamics(ModeId(0), vec({0.0}), vec({0.0})), NonFiniteDynamics);
}

TEST(Events, PaddleFreeFallImpact) {
  const Environment env = build_juggler();
  const HybridAutomaton& H = env.hybrid();
  const FeedbackLaw zero = constant_law(vec({0.0}));
  const HybridTrajectory tr = rollout(H, zero, vec({1.0, 0.0, 0.0, 0.0}), ModeId(0), 0.6, 0.01);
  ASSERT_FALSE(tr.failed);
  ASSERT_EQ(tr.events.size(), 1u);
  const double g = 9.81;
  EXPECT_NEAR(tr.events[0].time, std::sqrt(2.0 / g), 1e-9);
  EXPECT_NEAR(tr.events[0].pre_state[1], -std::sqrt(2.0 * g), 1e-8);
  EXPECT_NEAR(tr.events[0].pre_state[1], -4.4294, 1e-4);
  const Vec post = tr.events[0].post_state;
  EXPECT_NEAR(post[0], 0.0, 1e-9);
  EXPECT_NEAR(post[1], 0.8 * std::sqrt(2.0 * g), 1e-8);
  EXPECT_NEAR(post[1], 3.5436, 1e-4);
  EXPECT_EQ(post[2], 0.0);
  EXPECT_EQ(post[3], 0.0);
}

TEST(Events, JugglerResetMap) {
  const Environment env = build_juggler();
  const Vec post = apply_reset(env.hybrid().transitions()[0].reset, vec({0.0, -5.0, 0.0, 0.0}));
  EXPECT_NEAR((post - vec({0.0, 4.0, 0.0, 0.0})).norm(), 0.0, 1e-12);
}

TEST(Events, PendulumShortensOnEntry) {
  const Environment env = build_pendulum();
  const auto& tr = env.hybrid().transitions()[0];
  const double phi_p = -M_PI / 12.0;
  const Vec post = apply_reset(tr.reset, vec({phi_p, -2.0}));
  EXPECT_NEAR(post[0], phi_p, 1e-15);
  EXPECT_NEAR(post[1], -20.0 / 3.0, 1e-12);
  // The inverse reset restores the original velocity.
  const Vec back = apply_reset(env.hybrid().transitions()[1].reset, post);
  EXPECT_NEAR(back[1], -2.0, 1e-12);
}

TEST(Events, BisectionMeetsGuardTolerance) {
  // One long step holds several bounces; compare with the closed form.
  const HybridAutomaton H = bouncing_ball();
  const double g = 9.81;
  for (double h0 : {0.3, 1.0, 2.7}) {
    const StepResult r = step(H, ModeId(0), vec({h0, 0.0}), vec({0.0}), 2.0);
    ASSERT_GE(r.events.size(), 1u) << h0;
    double t = std::sqrt(2.0 * h0 / g);
    double v = std::sqrt(2.0 * g * h0);
    for (const auto& ev : r.events) {
      EXPECT_LE(std::abs(ev.pre_state[0]), 1e-10);
      EXPECT_NEAR(ev.time, t, 1e-8);
      EXPECT_NEAR(ev.pre_state[1], -v, 1e-7);
      v *= 0.8;
      t += 2.0 * v / g;
    }
    EXPECT_GT(t, 2.0) << "a bounce inside the step was missed";
  }
}

TEST(Events, DirectionIsRespected) {
  const HybridAutomaton H = bouncing_ball();
  // Rising from below through zero: the decreasing guard must stay silent.
  const StepResult r = step(H, ModeId(0), vec({0.0, 3.0}), vec({0.0}), 0.1);
  EXPECT_TRUE(r.events.empty());
  EXPECT_GT(r.state[0], 0.0);
}

TEST(Events, StartingOnTheSurfaceFiresImmediately) {
  const HybridAutomaton H = bouncing_ball();
  const StepResult r = step(H, ModeId(0), vec({0.0, -2.0}), vec({0.0}), 0.01);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].time, 0.0);
  EXPECT_NEAR(r.events[0].post_state[1], 1.6, 1e-12);
}

TEST(Events, EarliestOfTwoGuardsWins) {
  // Two floors at 0 and 0.5 from the same mode.
  const Box dom = box({{-10.0, 10.0}, {-100.0, 100.0}});
  auto f = [](ModeId, const Vec& s, const Vec&) -> Vec { return vec({s[1], 0.0}); };
  GuardedTransition low, high;
  for (auto* t : {&low, &high}) {
    t->from_mode = ModeId(0);
    t->to_mode = ModeId(1);
    t->guard_normal = vec({1.0, 0.0});
    t->reset = AffineResetMap::identity(2);
  }
  high.guard_offset = 0.5;
  HybridAutomaton H(2, 1, {Mode{ModeId(0), "a", dom}, Mode{ModeId(1), "b", dom}}, f, {low, high},
                    box({{-1.0, 1.0}}), {dom, ModeId(0)});
  const StepResult r = step(H, ModeId(0), vec({1.0, -1.0}), vec({0.0}), 2.0);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].transition, 1u);
  EXPECT_NEAR(r.events[0].time, 0.5, 1e-9);
  EXPECT_EQ(r.mode, ModeId(1));
}

TEST(Events, SimultaneousGuardsAreAmbiguous) {
  const Box dom = box({{-10.0, 10.0}, {-100.0, 100.0}});
  auto f = [](ModeId, const Vec& s, const Vec&) -> Vec { return vec({s[1], 0.0}); };
  GuardedTransition a;
  a.from_mode = ModeId(0);
  a.to_mode = ModeId(1);
  a.guard_normal = vec({1.0, 0.0});
  a.reset = AffineResetMap::identity(2);
  GuardedTransition b = a;
  b.to_mode = ModeId(2);
  HybridAutomaton H(2, 1, {Mode{ModeId(0), "a", dom}, Mode{ModeId(1), "b", dom}, Mode{ModeId(2), "c", dom}},
                    f, {a, b}, box({{-1.0, 1.0}}), {dom, ModeId(0)});
  EXPECT_THROW(step(H, ModeId(0), vec({0.5, -1.0}), vec({0.0}), 1.0), AmbiguousEvent);
}

TEST(Events, ChatteringHitsTheEventLimit) {
  // Identity reset leaves the state on the guard, still falling.
  const Box dom = box({{-10.0, 10.0}, {-100.0, 100.0}});
  auto f = [](ModeId, const Vec& s, const Vec&) -> Vec { return vec({s[1], 0.0}); };
  GuardedTransition t;
  t.from_mode = ModeId(0);
  t.to_mode = ModeId(0);
  t.guard_normal = vec({1.0, 0.0});
  t.reset = AffineResetMap::identity(2);
  HybridAutomaton H(2, 1, {Mode{ModeId(0), "a", dom}}, f, {t}, box({{-1.0, 1.0}}), {dom, ModeId(0)});
  EXPECT_THROW(step(H, ModeId(0), vec({0.05, -1.0}), vec({0.0}), 0.1), AmbiguousEvent);
}

TEST(Events, ResetOutsideTargetDomainRaises) {
  HybridAutomaton base = bouncing_ball();
  auto transitions = base.transitions();
  transitions[0].reset.p = vec({-5.0, 0.0});
  HybridAutomaton H(2, 1, base.modes(), base.dynamics_handle(), transitions, base.control_bounds(),
                    base.initial_distribution());
  EXPECT_THROW(step(H, ModeId(0), vec({0.01, -1.0}), vec({0.0}), 0.1), NoValidMode);
}

TEST(Events, LeavingTheDomainWithoutGuardRaises) {
  Mat A = Mat::Zero(1, 1);
  Mat B = Mat::Ones(1, 1);
  const HybridAutomaton H = linear_system(A, B, Vec::Zero(1), 1.0, 100.0);
  EXPECT_THROW(step(H, ModeId(0), vec({0.99}), vec({10.0}), 0.01), NoValidMode);
}

TEST(Events, ControlIsReevaluatedAfterReset) {
  const HybridAutomaton H = bouncing_ball();
  int calls = 0;
  const FeedbackLaw law = [&calls](ModeId, const Vec&) {
    ++calls;
    return vec({9.81});
  };
  // Post-bounce the ball is weightless: it rises at constant speed.
  const StepResult r = step(H, ModeId(0), vec({0.0, -1.0}), vec({0.0}), 0.1, {}, &law);
  EXPECT_EQ(calls, 1);
  EXPECT_NEAR(r.state[0], 0.8 * 0.1, 1e-12);
  EXPECT_NEAR(r.state[1], 0.8, 1e-12);
}

TEST(Rollout, ZeroHorizonHasOnlyTheInitialSample) {
  const HybridAutomaton H = bouncing_ball();
  const HybridTrajectory tr = rollout(H, constant_law(vec({0.0})), vec({1.0, 0.0}), ModeId(0), 0.0, 0.01);
  ASSERT_EQ(tr.samples.size(), 1u);
  EXPECT_EQ(tr.samples[0].time, 0.0);
}

TEST(Rollout, EventSamplesBracketTheReset) {
  const HybridAutomaton H = bouncing_ball();
  const HybridTrajectory tr = rollout(H, constant_law(vec({0.0})), vec({1.0, 0.0}), ModeId(0), 1.0, 0.01);
  ASSERT_EQ(tr.events.size(), 1u);
  std::size_t regular = 0, pre = 0, post = 0;
  for (std::size_t i = 0; i < tr.samples.size(); ++i) {
    const auto& smp = tr.samples[i];
    if (smp.kind == SampleKind::regular) ++regular;
    if (smp.kind == SampleKind::pre_event) {
      ++pre;
      ASSERT_LT(i + 1, tr.samples.size());
      EXPECT_EQ(tr.samples[i + 1].kind, SampleKind::post_event);
      EXPECT_EQ(tr.samples[i + 1].time, smp.time);
      EXPECT_LT(tr.samples[i + 1].state[1], -smp.state[1] + 1e-12);
    }
    if (smp.kind == SampleKind::post_event) ++post;
    if (i > 0) EXPECT_GE(smp.time, tr.samples[i - 1].time);
  }
  EXPECT_EQ(regular, 101u);
  EXPECT_EQ(pre, 1u);
  EXPECT_EQ(post, 1u);
  EXPECT_NEAR(tr.samples.back().time, 1.0, 1e-12);
}

TEST(Rollout, ErrorsAreCapturedOrRethrown) {
  Mat A = Mat::Zero(1, 1);
  Mat B = Mat::Ones(1, 1);
  const HybridAutomaton H = linear_system(A, B, Vec::Zero(1), 1.0, 100.0);
  RolloutOptions opts;
  opts.capture_errors = true;
  const HybridTrajectory tr = rollout(H, constant_law(vec({1.0})), vec({0.0}), ModeId(0), 5.0, 0.01, opts);
  EXPECT_TRUE(tr.failed);
  EXPECT_NEAR(tr.failure_time, 0.99, 0.011);
  EXPECT_NE(tr.failure.find("t = "), std::string::npos);
  opts.capture_errors = false;
  EXPECT_THROW(rollout(H, constant_law(vec({1.0})), vec({0.0}), ModeId(0), 5.0, 0.01, opts), NoValidMode);
}

TEST(Rollout, CsvHasHeaderAndOneRowPerSample) {
  const HybridAutomaton H = bouncing_ball();
  const HybridTrajectory tr = rollout(H, constant_law(vec({0.0})), vec({0.1, 0.0}), ModeId(0), 0.2, 0.01);
  std::ostringstream os;
  write_trajectory_csv(os, tr, 2, 1);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,mode,s_0,s_1,u_0,event_flag");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, tr.samples.size());
}

TEST(Automaton, JsonRoundTrip) {
  const Environment env = build_pendulum();
  const HybridAutomaton& H = env.hybrid();
  const json j = automaton_to_json(H);
  const HybridAutomaton back = automaton_from_json(j, H.dynamics_handle());
  EXPECT_EQ(automaton_to_json(back), j);
  EXPECT_EQ(back.transitions().size(), 2u);
  EXPECT_EQ(back.transitions()[1].crossing_direction, CrossingDirection::increasing);
}

TEST(Automaton, LocatePrefersTheHint) {
  const Environment env = build_pendulum();
  const HybridAutomaton& H = env.hybrid();
  const double phi_p = -M_PI / 12.0;
  EXPECT_EQ(H.locate(vec({phi_p, 0.0}), ModeId(1)), ModeId(1));
  EXPECT_EQ(H.locate(vec({phi_p, 0.0}), ModeId(0)), ModeId(0));
  EXPECT_EQ(H.locate(vec({1.0, 0.0}), ModeId(1)), ModeId(0));
  EXPECT_THROW(H.locate(vec({100.0, 0.0}), ModeId(0)), NoValidMode);
}
