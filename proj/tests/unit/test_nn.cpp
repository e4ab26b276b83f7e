#include "hsrl/nn.hpp"
#include "hsrl/policy.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace hsrl;
using namespace hsrl::test;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

Vec random_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = N(rng);
  return v;
}

}  // namespace

TEST(Mlp, ParameterLayout) {
  Mlp net({3, 4, 2});
  EXPECT_EQ(net.param_count(), 4 * 3 + 4 + 2 * 4 + 2);
  // Column-major weights then bias: setting W1(1, 2) moves output 1 only.
  net.params().setZero();
  Vec x = vec({0.0, 0.0, 1.0});
  Mlp lin({3, 2}, Activation::identity, Activation::identity);
  lin.params().setZero();
  lin.params()[2 * 2 + 1] = 5.0;  // W(1, 2)
  lin.params()[6 + 0] = -1.0;     // b(0)
  const Vec y = lin.forward(x);
  EXPECT_EQ(y, vec({-1.0, 5.0}));
}

TEST(Mlp, InitStaysWithinFanInBound) {
  std::mt19937_64 rng(3);
  Mlp net({4, 16, 1});
  net.init_uniform(rng);
  EXPECT_LE(net.params().head(16 * 4 + 16).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(net.params().tail(17).cwiseAbs().maxCoeff(), 0.25);
  EXPECT_GT(net.params().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ParameterAndInputGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int in = 1 + trial % 4;
    const int out = 1 + trial % 3;
    Mlp net({in, 5 + trial, 4 + trial % 5, out}, Activation::tanh,
            trial % 2 ? Activation::tanh : Activation::identity);
    net.init_uniform(rng);
    const Vec x = random_vec(in, rng);
    const Vec w = random_vec(out, rng);
    const auto g = net.forward_backward(x, w);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < net.param_count(); ++k) {
      Mlp p = net, m = net;
      p.params()[k] += h;
      m.params()[k] -= h;
      const double fd = (w.dot(p.forward(x)) - w.dot(m.forward(x))) / (2 * h);
      EXPECT_LT(rel_err(g.params[k], fd), 1e-4) << "trial " << trial << " param " << k;
    }
    for (Eigen::Index i = 0; i < in; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (w.dot(net.forward(xp)) - w.dot(net.forward(xm))) / (2 * h);
      EXPECT_LT(rel_err(g.input[i], fd), 1e-4);
    }
  }
}

TEST(Mlp, BatchBackwardSumsOverSamples) {
  std::mt19937_64 rng(5);
  Mlp net({2, 6, 1});
  net.init_uniform(rng);
  Mat X(2, 3);
  X << 0.1, -0.5, 2.0, 1.0, 0.3, -1.0;
  Mlp::Cache cache;
  net.forward_batch(X, &cache);
  Vec grad;
  net.backward_batch(cache, Mat::Ones(1, 3), grad);
  Vec sum = Vec::Zero(net.param_count());
  for (int j = 0; j < 3; ++j) sum += net.forward_backward(X.col(j), vec({1.0})).params;
  EXPECT_NEAR((grad - sum).norm(), 0.0, 1e-12);
}

TEST(Mlp, JsonRoundTripIsExact) {
  std::mt19937_64 rng(1);
  Mlp net({3, 7, 2}, Activation::tanh, Activation::tanh);
  net.init_uniform(rng);
  const Mlp back = Mlp::from_json(net.to_json());
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.widths(), net.widths());
  EXPECT_EQ(back.output_activation(), Activation::tanh);
  nlohmann::json bad = net.to_json();
  bad["params"].erase(0);
  EXPECT_THROW(Mlp::from_json(bad), ConfigError);
}

TEST(Adam, ZeroLearningRateLeavesParametersBitwise) {
  std::mt19937_64 rng(2);
  Vec p = random_vec(20, rng);
  const Vec before = p;
  Adam opt(p.size(), 0.0);
  for (int i = 0; i < 5; ++i) opt.step(p, random_vec(20, rng));
  EXPECT_EQ(std::memcmp(p.data(), before.data(), sizeof(double) * 20), 0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheSign) {
  Vec p = vec({1.0, 1.0, 1.0});
  Adam opt(3, 0.01);
  opt.step(p, vec({2.0, -0.5, 1e-3}));
  // m_hat / sqrt(v_hat) = sign(g) after bias correction.
  EXPECT_NEAR(p[0], 0.99, 1e-8);
  EXPECT_NEAR(p[1], 1.01, 1e-8);
  EXPECT_NEAR(p[2], 0.99, 1e-7);
}

TEST(Actor, OutputStaysInsideTheControlBox) {
  std::mt19937_64 rng(4);
  MlpActor actor(box({{-1, 1}, {-2, 2}}), box({{-3, 1}}), {8, 8});
  actor.net().init_uniform(rng);
  actor.net().params() *= 50.0;  // saturate
  for (int i = 0; i < 50; ++i) {
    const Vec a = actor.act(random_vec(2, rng, 3.0));
    EXPECT_GE(a[0], -3.0);
    EXPECT_LE(a[0], 1.0);
  }
}

TEST(Actor, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  MlpActor actor(box({{-1, 1}, {-2, 2}}), box({{-3, 1}, {0, 4}}), {6});
  actor.net().init_uniform(rng);
  Mat S = random_vec(2, rng, 0.5);
  const Mat w = random_vec(2, rng);
  Mlp::Cache cache;
  actor.act_batch(S, &cache);
  Vec grad;
  const Mat dS = actor.backward(cache, w, grad);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    MlpActor p = actor, m = actor;
    p.net().params()[k] += h;
    m.net().params()[k] -= h;
    const double fd = (w.col(0).dot(p.act(S.col(0))) - w.col(0).dot(m.act(S.col(0)))) / (2 * h);
    EXPECT_LT(rel_err(grad[k], fd), 1e-4);
  }
  for (int i = 0; i < 2; ++i) {
    Vec sp = S.col(0), sm = S.col(0);
    sp[i] += h;
    sm[i] -= h;
    const double fd = (w.col(0).dot(actor.act(sp)) - w.col(0).dot(actor.act(sm))) / (2 * h);
    EXPECT_LT(rel_err(dS(i, 0), fd), 1e-4);
  }
}

TEST(Critic, ActionAndParameterGradients) {
  std::mt19937_64 rng(9);
  Critic q(box({{-1, 1}, {-2, 2}}), box({{-3, 1}}), {7, 5});
  q.net().init_uniform(rng);
  const Vec s = vec({0.3, -1.1});
  const Vec a = vec({-0.4});
  Mlp::Cache cache;
  const Mat v = q.eval_batch(s, a, &cache);
  EXPECT_NEAR(v(0, 0), q.eval(s, a), 1e-15);
  Vec grad;
  const Mat dA = q.backward(cache, Mat::Ones(1, 1), &grad);
  const double h = 1e-6;
  const double fd_a = (q.eval(s, a + vec({h})) - q.eval(s, a - vec({h}))) / (2 * h);
  EXPECT_LT(rel_err(dA(0, 0), fd_a), 1e-4);
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    Critic p = q, m = q;
    p.net().params()[k] += h;
    m.net().params()[k] -= h;
    EXPECT_LT(rel_err(grad[k], (p.eval(s, a) - m.eval(s, a)) / (2 * h)), 1e-4);
  }
}

TEST(Normalizer, MapsTheBoxOntoTheUnitCube) {
  const Normalizer n = Normalizer::for_box(box({{2, 6}, {-1, 1}}));
  const Mat y = n.apply(vec({6.0, -1.0}));
  EXPECT_NEAR(y(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(y(1, 0), -1.0, 1e-15);
}
