#ifndef HSRL_TRAINER_HPP
#define HSRL_TRAINER_HPP

#include "hsrl/environments.hpp"
#include "hsrl/policy.hpp"
#include "hsrl/verifier.hpp"

#include <json.hpp>

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace hsrl {

struct TrainConfig {
  double gamma = 0.99;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double tau = 0.005;
  double policy_noise = 0.2;       // fractions of the control half-width
  double noise_clip = 0.5;
  double exploration_noise = 0.1;
  int policy_delay = 2;
  int batch_size = 256;
  int replay_capacity = 100000;
  std::vector<int> hidden{64, 64};

  int stage1_epochs = 1000;
  int episodes_per_epoch = 10;
  int episode_steps = 400;
  int warmup_steps = 2000;
  double updates_per_step = 1.0;

  int stage2_max_epochs = 200;
  int stage2_episodes = 4;         // per buffer and epoch
  int stage2_episode_steps = 100;
  int stage2_updates = 20;         // gradient steps per buffer and epoch
  double stage2_lr = 0.05;
  double violation_penalty = 10.0;
  double q_weight = 1.0;
  double hinge_weight = 10.0;
  double hinge_slack = 0.5;        // hinge aims this far beyond the target margin
  double bound_weight = 10.0;
  double bound_fraction = 0.95;
  double fd_step = 1e-6;           // numeric gradient of vertex margins
  int fit_grid = 9;                // affine warm start grid per coordinate

  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);

struct Transition {
  Vec state;
  Vec control;
  double reward = 0.0;
  Vec next_state;
  bool done = false;
  ModeId mode;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void add(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  /// Uniform indices with replacement.
  std::vector<std::size_t> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct Batch {
  Mat S, A, S2;
  RowVec R, done;

  static Batch gather(const ReplayBuffer& replay, const std::vector<std::size_t>& idx);
};

struct Td3Agent {
  MlpActor actor, actor_target;
  Critic q1, q2, q1_target, q2_target;
  Adam actor_opt, q1_opt, q2_opt;
  long updates = 0;

  Td3Agent(const Environment& env, const TrainConfig& cfg, std::mt19937_64& rng);
  Td3Agent(MlpActor a, Critic c1, Critic c2, const TrainConfig& cfg);
};

/// y = r + gamma (1 - done) min(Q1', Q2')(s', clamp(pi'(s') + clipped noise)).
RowVec td3_targets(const Td3Agent& agent, const Batch& batch, const TrainConfig& cfg,
                   std::mt19937_64& rng);

struct Td3Losses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  double actor = 0.0;
  bool actor_updated = false;
  double mean_abs_q = 0.0;
};

/// One TD3 step: critic regression, delayed actor ascent on Q1, soft targets.
Td3Losses td3_update(Td3Agent& agent, const Batch& batch, const TrainConfig& cfg,
                     std::mt19937_64& rng);

void soft_update(Mlp& target, const Mlp& online, double tau);

struct BufferStatus {
  std::string name;
  double satisfied_fraction = 0.0;
  double worst_margin = 0.0;
  bool satisfied = false;
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double mean_return = 0.0;
  double violation_rate = 0.0;
  double critic_loss = 0.0;
  std::vector<BufferStatus> buffers;
  bool certified = false;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  bool certified = false;
  double wall_time = 0.0;  // seconds; not part of run identity
};

nlohmann::json epoch_to_json(const EpochRecord& r);

/// Stage 1: TD3 on the task reward, MLP actor and critics only. Records are
/// streamed to `log` as JSON lines when non-null.
TrainingReport train_stage1(const Environment& env, PolicyCheckpoint& ckpt, const TrainConfig& cfg,
                            std::ostream* log = nullptr);

/// Stage 2: per-buffer affine actors with the MLP and critics frozen, until
/// every vertex certificate holds. Throws CertificateUnreachable otherwise.
TrainingReport train_stage2(const Environment& env, PolicyCheckpoint& ckpt, const TrainConfig& cfg,
                            const std::vector<ApproximationMeasure>& measures,
                            const VerifierOptions& vopts = {}, std::ostream* log = nullptr);

/// Fresh checkpoint (random MLP and critics from the config seed).
PolicyCheckpoint initial_checkpoint(const Environment& env, const TrainConfig& cfg);

/// Least-squares affine fit of the MLP actor over a grid in the buffer.
AffineActor fit_affine_to_mlp(const MlpActor& mlp, const BufferSpec& buffer, int grid);

}  // namespace hsrl

#endif  // HSRL_TRAINER_HPP
