#ifndef HSRL_POLICY_HPP
#define HSRL_POLICY_HPP

#include "hsrl/geometry.hpp"
#include "hsrl/nn.hpp"

#include <json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hsrl {

/// u = clamp(D s + e) inside the owning buffer.
struct AffineActor {
  Mat D;
  Vec e;

  Vec pre_clamp(const Vec& s) const { return D * s + e; }
};

/// tanh network whose output is scaled onto the control box.
class MlpActor {
 public:
  MlpActor() = default;
  MlpActor(const Box& state_box, const Box& control_bounds, const std::vector<int>& hidden);

  Vec act(const Vec& s) const;
  Mat act_batch(const Mat& S, Mlp::Cache* cache = nullptr) const;
  /// Accumulates d(sum <dA, A>)/dparams; returns the state gradient.
  Mat backward(const Mlp::Cache& cache, const Mat& dA, Vec& grad) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const Normalizer& normalizer() const { return norm_; }
  const Box& control_bounds() const { return bounds_; }

  nlohmann::json to_json() const;
  static MlpActor from_json(const nlohmann::json& j);

 private:
  Mlp net_;
  Normalizer norm_;
  Box bounds_;
};

/// Q(s, a) network over normalised state and action.
class Critic {
 public:
  Critic() = default;
  Critic(const Box& state_box, const Box& control_bounds, const std::vector<int>& hidden);

  double eval(const Vec& s, const Vec& a) const;
  /// Returns a 1 x B row of values.
  Mat eval_batch(const Mat& S, const Mat& A, Mlp::Cache* cache = nullptr) const;
  /// Accumulates d(sum dQ . Q)/dparams into grad (when non-null) and returns
  /// the gradient with respect to the raw action inputs (m x B).
  Mat backward(const Mlp::Cache& cache, const Mat& dQ, Vec* grad) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  Eigen::Index state_dim() const { return state_norm_.offset.size(); }

  nlohmann::json to_json() const;
  static Critic from_json(const nlohmann::json& j);

 private:
  Mat inputs(const Mat& S, const Mat& A) const;

  Mlp net_;
  Normalizer state_norm_;
  Normalizer action_norm_;
};

/// Affine actors inside buffers, MLP elsewhere. The first buffer (in list
/// order) containing the state in the active mode owns it, so states on a
/// shared face resolve deterministically.
class SwitchedPolicy {
 public:
  SwitchedPolicy() = default;
  SwitchedPolicy(std::vector<BufferSpec> buffers, MlpActor mlp);

  Vec act(ModeId mode, const Vec& s) const;
  std::optional<std::size_t> region(ModeId mode, const Vec& s) const;

  const std::vector<BufferSpec>& buffers() const { return buffers_; }
  std::vector<AffineActor>& affine() { return affine_; }
  const std::vector<AffineActor>& affine() const { return affine_; }
  MlpActor& mlp() { return mlp_; }
  const MlpActor& mlp() const { return mlp_; }
  const Box& control_bounds() const { return mlp_.control_bounds(); }

 private:
  std::vector<BufferSpec> buffers_;
  std::vector<AffineActor> affine_;
  MlpActor mlp_;
};

/// Everything a trained run persists.
struct PolicyCheckpoint {
  SwitchedPolicy policy;
  Critic critic1;
  Critic critic2;
  std::string config_hash;
  int stage = 0;  // last completed training stage
};

nlohmann::json checkpoint_to_json(const PolicyCheckpoint& ckpt);
/// Affine actors are matched to `buffers` by name; missing ones start at zero.
PolicyCheckpoint checkpoint_from_json(const nlohmann::json& j, std::vector<BufferSpec> buffers);
void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_checkpoint(const std::string& path, std::vector<BufferSpec> buffers);

}  // namespace hsrl

#endif  // HSRL_POLICY_HPP
