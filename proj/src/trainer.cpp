#include "hsrl/trainer.hpp"

#include "hsrl/estimation.hpp"
#include "hsrl/json_io.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace hsrl {

void TrainConfig::validate() const {
  auto positive = [](double x, const char* what) {
    if (!(x > 0.0)) throw ConfigError(std::string(what) + " must be positive");
  };
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (actor_lr < 0 || critic_lr < 0 || stage2_lr < 0) throw ConfigError("learning rates must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (policy_noise < 0 || noise_clip < 0 || exploration_noise < 0) {
    throw ConfigError("noise scales must be >= 0");
  }
  if (violation_penalty < 0) throw ConfigError("violation_penalty must be >= 0");
  positive(policy_delay, "policy_delay");
  positive(batch_size, "batch_size");
  positive(replay_capacity, "replay_capacity");
  positive(episodes_per_epoch, "episodes_per_epoch");
  positive(episode_steps, "episode_steps");
  positive(stage2_episodes, "stage2_episodes");
  positive(stage2_episode_steps, "stage2_episode_steps");
  positive(fd_step, "fd_step");
  if (stage1_epochs < 0 || stage2_max_epochs < 0 || stage2_updates < 0 || warmup_steps < 0) {
    throw ConfigError("epoch and step counts must be >= 0");
  }
  if (!(bound_fraction > 0.0 && bound_fraction <= 1.0)) throw ConfigError("bound_fraction must lie in (0, 1]");
  if (fit_grid < 2) throw ConfigError("fit_grid must be >= 2");
  for (int h : hidden) positive(h, "hidden width");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
#define HSRL_FIELD(name) c.name = value_or(j, #name, c.name)
  HSRL_FIELD(gamma);
  HSRL_FIELD(actor_lr);
  HSRL_FIELD(critic_lr);
  HSRL_FIELD(tau);
  HSRL_FIELD(policy_noise);
  HSRL_FIELD(noise_clip);
  HSRL_FIELD(exploration_noise);
  HSRL_FIELD(policy_delay);
  HSRL_FIELD(batch_size);
  HSRL_FIELD(replay_capacity);
  HSRL_FIELD(hidden);
  HSRL_FIELD(stage1_epochs);
  HSRL_FIELD(episodes_per_epoch);
  HSRL_FIELD(episode_steps);
  HSRL_FIELD(warmup_steps);
  HSRL_FIELD(updates_per_step);
  HSRL_FIELD(stage2_max_epochs);
  HSRL_FIELD(stage2_episodes);
  HSRL_FIELD(stage2_episode_steps);
  HSRL_FIELD(stage2_updates);
  HSRL_FIELD(stage2_lr);
  HSRL_FIELD(violation_penalty);
  HSRL_FIELD(q_weight);
  HSRL_FIELD(hinge_weight);
  HSRL_FIELD(hinge_slack);
  HSRL_FIELD(bound_weight);
  HSRL_FIELD(bound_fraction);
  HSRL_FIELD(fd_step);
  HSRL_FIELD(fit_grid);
  HSRL_FIELD(seed);
#undef HSRL_FIELD
  c.validate();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
#define HSRL_FIELD(name) j[#name] = c.name
  HSRL_FIELD(gamma);
  HSRL_FIELD(actor_lr);
  HSRL_FIELD(critic_lr);
  HSRL_FIELD(tau);
  HSRL_FIELD(policy_noise);
  HSRL_FIELD(noise_clip);
  HSRL_FIELD(exploration_noise);
  HSRL_FIELD(policy_delay);
  HSRL_FIELD(batch_size);
  HSRL_FIELD(replay_capacity);
  HSRL_FIELD(hidden);
  HSRL_FIELD(stage1_epochs);
  HSRL_FIELD(episodes_per_epoch);
  HSRL_FIELD(episode_steps);
  HSRL_FIELD(warmup_steps);
  HSRL_FIELD(updates_per_step);
  HSRL_FIELD(stage2_max_epochs);
  HSRL_FIELD(stage2_episodes);
  HSRL_FIELD(stage2_episode_steps);
  HSRL_FIELD(stage2_updates);
  HSRL_FIELD(stage2_lr);
  HSRL_FIELD(violation_penalty);
  HSRL_FIELD(q_weight);
  HSRL_FIELD(hinge_weight);
  HSRL_FIELD(hinge_slack);
  HSRL_FIELD(bound_weight);
  HSRL_FIELD(bound_fraction);
  HSRL_FIELD(fd_step);
  HSRL_FIELD(fit_grid);
  HSRL_FIELD(seed);
#undef HSRL_FIELD
  return j;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::add(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  if (data_.empty()) throw Error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> dist(0, data_.size() - 1);
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = dist(rng);
  return idx;
}

Batch Batch::gather(const ReplayBuffer& replay, const std::vector<std::size_t>& idx) {
  const auto B = static_cast<Eigen::Index>(idx.size());
  const auto n = replay[idx.front()].state.size();
  const auto m = replay[idx.front()].control.size();
  Batch b{Mat(n, B), Mat(m, B), Mat(n, B), RowVec(B), RowVec(B)};
  for (Eigen::Index k = 0; k < B; ++k) {
    const Transition& t = replay[idx[static_cast<std::size_t>(k)]];
    b.S.col(k) = t.state;
    b.A.col(k) = t.control;
    b.S2.col(k) = t.next_state;
    b.R[k] = t.reward;
    b.done[k] = t.done ? 1.0 : 0.0;
  }
  return b;
}

Td3Agent::Td3Agent(const Environment& env, const TrainConfig& cfg, std::mt19937_64& rng)
    : actor(env.state_scale, env.hybrid().control_bounds(), cfg.hidden),
      q1(env.state_scale, env.hybrid().control_bounds(), cfg.hidden),
      q2(env.state_scale, env.hybrid().control_bounds(), cfg.hidden) {
  actor.net().init_uniform(rng);
  q1.net().init_uniform(rng);
  q2.net().init_uniform(rng);
  *this = Td3Agent(actor, q1, q2, cfg);
}

Td3Agent::Td3Agent(MlpActor a, Critic c1, Critic c2, const TrainConfig& cfg)
    : actor(std::move(a)), actor_target(actor), q1(std::move(c1)), q2(std::move(c2)),
      q1_target(q1), q2_target(q2),
      actor_opt(actor.net().param_count(), cfg.actor_lr),
      q1_opt(q1.net().param_count(), cfg.critic_lr),
      q2_opt(q2.net().param_count(), cfg.critic_lr) {}

RowVec td3_targets(const Td3Agent& agent, const Batch& batch, const TrainConfig& cfg,
                   std::mt19937_64& rng) {
  const Box& bounds = agent.actor.control_bounds();
  Mat A2 = agent.actor_target.act_batch(batch.S2);
  if (cfg.policy_noise > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < A2.cols(); ++k) {
      for (Eigen::Index i = 0; i < A2.rows(); ++i) {
        const double hw = bounds.half_width()[i];
        const double noise = std::clamp(cfg.policy_noise * normal(rng), -cfg.noise_clip, cfg.noise_clip);
        A2(i, k) = std::clamp(A2(i, k) + hw * noise, bounds.lo[i], bounds.hi[i]);
      }
    }
  }
  const RowVec t1 = agent.q1_target.eval_batch(batch.S2, A2);
  const RowVec t2 = agent.q2_target.eval_batch(batch.S2, A2);
  const RowVec tmin = t1.cwiseMin(t2);
  RowVec y(batch.R.size());
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    y[k] = batch.done[k] > 0.0 || cfg.gamma == 0.0 ? batch.R[k] : batch.R[k] + cfg.gamma * tmin[k];
  }
  return y;
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (tau == 1.0) {
    target.params() = online.params();
  } else {
    target.params() = tau * online.params() + (1.0 - tau) * target.params();
  }
}

namespace {

double critic_step(Critic& q, Adam& opt, const Batch& b, const RowVec& y, double* mean_abs) {
  Mlp::Cache cache;
  const RowVec pred = q.eval_batch(b.S, b.A, &cache);
  const RowVec err = pred - y;
  const double B = static_cast<double>(y.size());
  const double loss = err.squaredNorm() / B;
  if (!std::isfinite(loss)) throw NonFiniteLoss("critic loss is not finite");
  Vec grad = Vec::Zero(q.net().param_count());
  q.backward(cache, (2.0 / B) * err, &grad);
  opt.step(q.net().params(), grad);
  if (mean_abs != nullptr) *mean_abs = pred.cwiseAbs().mean();
  return loss;
}

}  // namespace

Td3Losses td3_update(Td3Agent& agent, const Batch& batch, const TrainConfig& cfg,
                     std::mt19937_64& rng) {
  Td3Losses out;
  const RowVec y = td3_targets(agent, batch, cfg, rng);
  if (!y.allFinite()) throw NonFiniteLoss("TD target is not finite");
  out.critic1 = critic_step(agent.q1, agent.q1_opt, batch, y, &out.mean_abs_q);
  out.critic2 = critic_step(agent.q2, agent.q2_opt, batch, y, nullptr);
  if (out.mean_abs_q > 1e6) throw Divergence("mean |Q| exceeded 1e6");

  ++agent.updates;
  if (agent.updates % cfg.policy_delay == 0) {
    Mlp::Cache actor_cache, critic_cache;
    const Mat A = agent.actor.act_batch(batch.S, &actor_cache);
    const RowVec q = agent.q1.eval_batch(batch.S, A, &critic_cache);
    const double B = static_cast<double>(q.size());
    out.actor = -q.mean();
    if (!std::isfinite(out.actor)) throw NonFiniteLoss("actor loss is not finite");
    const Mat dQda = agent.q1.backward(critic_cache, RowVec::Constant(q.size(), -1.0 / B), nullptr);
    Vec grad = Vec::Zero(agent.actor.net().param_count());
    agent.actor.backward(actor_cache, dQda, grad);
    agent.actor_opt.step(agent.actor.net().params(), grad);
    out.actor_updated = true;

    soft_update(agent.actor_target.net(), agent.actor.net(), cfg.tau);
    soft_update(agent.q1_target.net(), agent.q1.net(), cfg.tau);
    soft_update(agent.q2_target.net(), agent.q2.net(), cfg.tau);
  }
  return out;
}

nlohmann::json epoch_to_json(const EpochRecord& r) {
  nlohmann::json j{{"stage", r.stage},
                   {"epoch", r.epoch},
                   {"mean_return", r.mean_return},
                   {"violation_rate", r.violation_rate}};
  if (r.stage == 1) j["critic_loss"] = r.critic_loss;
  if (r.stage == 2) {
    j["certified"] = r.certified;
    j["buffers"] = nlohmann::json::array();
    for (const auto& b : r.buffers) {
      j["buffers"].push_back({{"name", b.name},
                              {"satisfied_fraction", b.satisfied_fraction},
                              {"worst_margin", b.worst_margin},
                              {"satisfied", b.satisfied}});
    }
  }
  return j;
}

namespace {

bool step_violates(const Environment& env, const StepResult& r) {
  for (const auto& ev : r.events) {
    const auto& tr = env.hybrid().transitions()[ev.transition];
    for (const auto& jc : env.jump_constraints) {
      if (jc.source_transition == ev.transition && !jc.satisfied(ev.pre_state, 1e-9)) return true;
    }
    for (const auto& c : env.constraints) {
      if (c.active_in(tr.to_mode) && !c.satisfied(ev.post_state, 1e-9)) return true;
    }
  }
  for (const auto& c : env.constraints) {
    if (c.active_in(r.mode) && !c.satisfied(r.state, 1e-9)) return true;
  }
  return false;
}

std::pair<ModeId, Vec> sample_start(const Environment& env, std::mt19937_64& rng) {
  std::vector<double> w;
  for (const auto& r : env.train_starts) w.push_back(r.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  return sample_region(env.hybrid(), env.train_starts[pick(rng)], rng);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PolicyCheckpoint initial_checkpoint(const Environment& env, const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  Td3Agent agent(env, cfg, rng);
  PolicyCheckpoint c;
  c.policy = SwitchedPolicy(env.buffers, agent.actor);
  c.critic1 = agent.q1;
  c.critic2 = agent.q2;
  c.stage = 0;
  return c;
}

TrainingReport train_stage1(const Environment& env, PolicyCheckpoint& ckpt, const TrainConfig& cfg,
                            std::ostream* log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const HybridAutomaton& H = env.hybrid();
  std::mt19937_64 rng(cfg.seed + 1);
  Td3Agent agent(ckpt.policy.mlp(), ckpt.critic1, ckpt.critic2, cfg);
  ReplayBuffer replay(static_cast<std::size_t>(cfg.replay_capacity));
  const Box& ub = H.control_bounds();
  std::normal_distribution<double> normal(0.0, 1.0);
  long total_steps = 0;
  double credit = 0.0;

  TrainingReport report;
  for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    EpochRecord rec;
    rec.stage = 1;
    rec.epoch = epoch;
    double critic_loss = 0.0;
    long critic_updates = 0;
    int violated_episodes = 0;
    for (int ep = 0; ep < cfg.episodes_per_epoch; ++ep) {
      auto [q, s] = sample_start(env, rng);
      double ret = 0.0;
      bool violated = false;
      for (int t = 0; t < cfg.episode_steps; ++t) {
        Vec a(ub.dim());
        if (total_steps < cfg.warmup_steps) {
          for (Eigen::Index i = 0; i < a.size(); ++i) {
            a[i] = std::uniform_real_distribution<double>(ub.lo[i], ub.hi[i])(rng);
          }
        } else {
          a = agent.actor.act(s);
          for (Eigen::Index i = 0; i < a.size(); ++i) {
            a[i] += cfg.exploration_noise * ub.half_width()[i] * normal(rng);
          }
          a = ub.clamp(a);
        }
        Transition tr{s, a, 0.0, s, false, q};
        ModeId q_next = q;
        try {
          StepResult r = step(H, q, s, a, env.dt);
          tr.reward = env.reward(q, s, a, r.mode, r.state);
          violated = violated || step_violates(env, r);
          tr.next_state = r.state;
          q_next = r.mode;
        } catch (const NoValidMode&) {
          tr.reward = env.failure_penalty;
          tr.done = true;
        } catch (const AmbiguousEvent&) {
          tr.reward = env.failure_penalty;
          tr.done = true;
        }
        ret += tr.reward;
        const bool done = tr.done;
        s = tr.next_state;
        q = q_next;
        replay.add(std::move(tr));
        ++total_steps;
        if (total_steps >= cfg.warmup_steps && replay.size() >= static_cast<std::size_t>(cfg.batch_size)) {
          credit += cfg.updates_per_step;
          while (credit >= 1.0) {
            credit -= 1.0;
            const Batch b = Batch::gather(replay, replay.sample(static_cast<std::size_t>(cfg.batch_size), rng));
            const Td3Losses l = td3_update(agent, b, cfg, rng);
            critic_loss += l.critic1;
            ++critic_updates;
          }
        }
        if (done) {
          violated = true;  // leaving the model counts against safety
          break;
        }
      }
      rec.mean_return += ret / cfg.episodes_per_epoch;
      violated_episodes += violated ? 1 : 0;
    }
    rec.violation_rate = static_cast<double>(violated_episodes) / cfg.episodes_per_epoch;
    rec.critic_loss = critic_updates > 0 ? critic_loss / static_cast<double>(critic_updates) : 0.0;
    if (log != nullptr) *log << epoch_to_json(rec).dump() << '\n' << std::flush;
    report.epochs.push_back(std::move(rec));
  }
  ckpt.policy.mlp() = agent.actor;
  ckpt.critic1 = agent.q1;
  ckpt.critic2 = agent.q2;
  ckpt.stage = 1;
  report.wall_time = elapsed_since(t0);
  return report;
}

AffineActor fit_affine_to_mlp(const MlpActor& mlp, const BufferSpec& buffer, int grid) {
  const Box& box = buffer.bounds;
  const auto pts = grid_points(box, std::vector<int>(static_cast<std::size_t>(box.dim()), grid));
  const auto N = static_cast<Eigen::Index>(pts.size());
  const Eigen::Index n = box.dim();
  Mat X(N, n + 1);
  Mat S(n, N);
  for (Eigen::Index k = 0; k < N; ++k) {
    S.col(k) = pts[static_cast<std::size_t>(k)];
    X.row(k).head(n) = ((pts[static_cast<std::size_t>(k)] - box.center()).array() /
                        box.half_width().cwiseMax(1e-12).array()).matrix().transpose();
    X(k, n) = 1.0;
  }
  const Mat Y = mlp.act_batch(S).transpose();  // N x m
  const Mat W = X.colPivHouseholderQr().solve(Y);  // (n+1) x m, normalised coordinates
  AffineActor a;
  const Vec inv_hw = box.half_width().cwiseMax(1e-12).cwiseInverse();
  a.D = (W.topRows(n).transpose().array().rowwise() * inv_hw.transpose().array()).matrix();
  a.e = W.row(n).transpose() - a.D * box.center();
  return a;
}

namespace {

// Affine actor in box-normalised coordinates: u = Dh (s - c) ./ hw + eh.
struct NormalisedAffine {
  Vec c, hw;
  Eigen::Index m, n;

  Vec pack(const AffineActor& a) const {
    Vec theta(m * (n + 1));
    const Mat Dh = (a.D.array().rowwise() * hw.transpose().array()).matrix();
    const Vec eh = a.e + a.D * c;
    for (Eigen::Index i = 0; i < m; ++i) {
      theta.segment(i * (n + 1), n) = Dh.row(i).transpose();
      theta[i * (n + 1) + n] = eh[i];
    }
    return theta;
  }
  AffineActor unpack(const Vec& theta) const {
    Mat Dh(m, n);
    Vec eh(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Dh.row(i) = theta.segment(i * (n + 1), n).transpose();
      eh[i] = theta[i * (n + 1) + n];
    }
    AffineActor a;
    a.D = (Dh.array().rowwise() / hw.transpose().array()).matrix();
    a.e = eh - a.D * c;
    return a;
  }
};

double certificate_loss(const HybridAutomaton& H, const BufferSpec& buffer, const AffineActor& a,
                        const ApproximationMeasure& measure, const VerifierOptions& vopts,
                        const TrainConfig& cfg) {
  const BufferCertificate bc = check_buffer(H, buffer, a, measure, vopts);
  const Box& ub = H.control_bounds();
  const double aim = buffer.target_margin + cfg.hinge_slack;
  double loss = 0.0;
  for (const auto& c : bc.checks) {
    loss += cfg.hinge_weight * std::max(0.0, aim - c.margin);
    for (Eigen::Index i = 0; i < c.control.size(); ++i) {
      const double excess = std::abs(c.control[i] - ub.center()[i]) - cfg.bound_fraction * ub.half_width()[i];
      if (excess > 0.0) loss += cfg.bound_weight * excess * excess;
    }
  }
  return loss;
}

}  // namespace

TrainingReport train_stage2(const Environment& env, PolicyCheckpoint& ckpt, const TrainConfig& cfg,
                            const std::vector<ApproximationMeasure>& measures,
                            const VerifierOptions& vopts, std::ostream* log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const HybridAutomaton& H = env.hybrid();
  SwitchedPolicy& policy = ckpt.policy;
  const auto& buffers = policy.buffers();
  if (measures.size() != buffers.size()) throw ConfigError("one measure per buffer required");
  TrainingReport report;
  if (buffers.empty()) {
    throw CertificateUnreachable("no buffers configured: nothing to certify");
  }

  std::mt19937_64 rng(cfg.seed + 2);
  const Box& ub = H.control_bounds();
  const Eigen::Index m = ub.dim();
  const Eigen::Index n = H.state_dim();
  const FeedbackLaw law = [&policy](ModeId q, const Vec& s) { return policy.act(q, s); };

  std::vector<NormalisedAffine> param;
  std::vector<Adam> opt;
  std::vector<bool> done(buffers.size(), false);
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    policy.affine()[i] = fit_affine_to_mlp(policy.mlp(), buffers[i], cfg.fit_grid);
    param.push_back({buffers[i].bounds.center(), buffers[i].bounds.half_width().cwiseMax(1e-12), m, n});
    opt.emplace_back(m * (n + 1), cfg.stage2_lr);
  }

  for (int epoch = 0; epoch < cfg.stage2_max_epochs && !report.certified; ++epoch) {
    EpochRecord rec;
    rec.stage = 2;
    rec.epoch = epoch;
    int episodes = 0;
    int violated_episodes = 0;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      if (done[i]) continue;
      const BufferSpec& buf = buffers[i];
      // Buffer-reset episodes under the current switched policy.
      std::vector<Vec> inside;
      for (int ep = 0; ep < cfg.stage2_episodes; ++ep) {
        auto [q, s] = sample_region(H, {buf.name, buf.bounds, buf.mode, 1.0}, rng);
        q = buf.mode;
        double ret = 0.0;
        bool violated = false;
        for (int t = 0; t < cfg.stage2_episode_steps; ++t) {
          if (policy.region(q, s) == i) inside.push_back(s);
          const Vec a = policy.act(q, s);
          try {
            StepResult r = step(H, q, s, a, env.dt, {}, &law);
            const bool v = step_violates(env, r);
            ret += env.reward(q, s, a, r.mode, r.state) - (v ? cfg.violation_penalty : 0.0);
            violated = violated || v;
            q = r.mode;
            s = r.state;
          } catch (const NoValidMode&) {
            ret += env.failure_penalty;
            violated = true;
            break;
          } catch (const AmbiguousEvent&) {
            ret += env.failure_penalty;
            violated = true;
            break;
          }
        }
        rec.mean_return += ret;
        ++episodes;
        violated_episodes += violated ? 1 : 0;
      }

      const std::size_t B = std::min<std::size_t>(inside.size(), static_cast<std::size_t>(cfg.batch_size));
      Mat S(n, static_cast<Eigen::Index>(B));
      for (std::size_t k = 0; k < B; ++k) {
        S.col(static_cast<Eigen::Index>(k)) =
            inside[B == inside.size() ? k : std::uniform_int_distribution<std::size_t>(0, inside.size() - 1)(rng)];
      }

      Vec theta = param[i].pack(policy.affine()[i]);
      for (int it = 0; it < cfg.stage2_updates; ++it) {
        Vec grad = Vec::Zero(theta.size());
        const AffineActor cur = param[i].unpack(theta);
        if (cfg.q_weight > 0.0 && B > 0) {
          const Mat pre = (cur.D * S).colwise() + cur.e;
          Mat a = pre;
          for (Eigen::Index k = 0; k < a.cols(); ++k) a.col(k) = a.col(k).cwiseMin(ub.hi).cwiseMax(ub.lo);
          Mlp::Cache cache;
          const RowVec qv = ckpt.critic1.eval_batch(S, a, &cache);
          Mat dL = ckpt.critic1.backward(cache, RowVec::Constant(qv.size(), -cfg.q_weight / B), nullptr);
          for (Eigen::Index k = 0; k < dL.cols(); ++k) {
            for (Eigen::Index r = 0; r < m; ++r) {
              if (pre(r, k) < ub.lo[r] || pre(r, k) > ub.hi[r]) dL(r, k) = 0.0;
            }
          }
          // Chain rule into the normalised parameters.
          for (Eigen::Index r = 0; r < m; ++r) {
            for (Eigen::Index k = 0; k < dL.cols(); ++k) {
              const Vec z = (S.col(k) - param[i].c).cwiseQuotient(param[i].hw);
              grad.segment(r * (n + 1), n) += dL(r, k) * z;
              grad[r * (n + 1) + n] += dL(r, k);
            }
          }
        }
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
          const double h = cfg.fd_step * std::max(1.0, std::abs(theta[k]));
          Vec tp = theta, tm = theta;
          tp[k] += h;
          tm[k] -= h;
          const double lp = certificate_loss(H, buf, param[i].unpack(tp), measures[i], vopts, cfg);
          const double lm = certificate_loss(H, buf, param[i].unpack(tm), measures[i], vopts, cfg);
          grad[k] += (lp - lm) / (2.0 * h);
        }
        if (!grad.allFinite()) throw NonFiniteLoss(buf.name + ": non-finite stage-2 gradient");
        opt[i].step(theta, grad);
      }
      policy.affine()[i] = param[i].unpack(theta);
    }

    bool all = true;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      const BufferCertificate bc = check_buffer(H, buffers[i], policy.affine()[i], measures[i], vopts);
      rec.buffers.push_back({bc.name, bc.satisfied_fraction, bc.worst_margin, bc.satisfied});
      if (bc.satisfied && bc.worst_margin >= buffers[i].target_margin) done[i] = true;
      all = all && done[i];
    }
    rec.mean_return = episodes > 0 ? rec.mean_return / episodes : 0.0;
    rec.violation_rate = episodes > 0 ? static_cast<double>(violated_episodes) / episodes : 0.0;
    rec.certified = all;
    report.certified = all;
    if (log != nullptr) *log << epoch_to_json(rec).dump() << '\n' << std::flush;
    report.epochs.push_back(std::move(rec));
  }

  report.wall_time = elapsed_since(t0);
  if (!report.certified) {
    // Accept if every vertex condition holds even where the robustness target
    // was not reached; otherwise the buffer set is not certifiable.
    const SafetyCertificate cert = certify(H, policy, measures, vopts);
    if (!cert.overall) {
      throw CertificateUnreachable("vertex conditions still violated after " +
                                   std::to_string(cfg.stage2_max_epochs) + " epochs: " + cert.status);
    }
    report.certified = true;
  }
  ckpt.stage = 2;
  return report;
}

}  // namespace hsrl
