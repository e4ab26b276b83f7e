#include "hsrl/policy.hpp"

#include "hsrl/json_io.hpp"

namespace hsrl {

namespace {

std::vector<int> layer_widths(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out) {
  std::vector<int> w{static_cast<int>(in)};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(static_cast<int>(out));
  return w;
}

}  // namespace

MlpActor::MlpActor(const Box& state_box, const Box& control_bounds, const std::vector<int>& hidden)
    : net_(layer_widths(state_box.dim(), hidden, control_bounds.dim()), Activation::tanh,
           Activation::tanh),
      norm_(Normalizer::for_box(state_box)),
      bounds_(control_bounds) {}

Vec MlpActor::act(const Vec& s) const { return act_batch(s).col(0); }

Mat MlpActor::act_batch(const Mat& S, Mlp::Cache* cache) const {
  const Mat y = net_.forward_batch(norm_.apply(S), cache);
  Mat a = (y.array().colwise() * bounds_.half_width().array()).matrix();
  a.colwise() += bounds_.center();
  // tanh saturates to exactly +-1 in floating point; keep the clamp explicit.
  for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) = a.col(j).cwiseMin(bounds_.hi).cwiseMax(bounds_.lo);
  return a;
}

Mat MlpActor::backward(const Mlp::Cache& cache, const Mat& dA, Vec& grad) const {
  const Mat dY = (dA.array().colwise() * bounds_.half_width().array()).matrix();
  const Mat dX = net_.backward_batch(cache, dY, grad);
  return (dX.array().colwise() * norm_.scale.array()).matrix();
}

nlohmann::json MlpActor::to_json() const {
  return {{"net", net_.to_json()},
          {"input", norm_.to_json()},
          {"control_bounds", box_to_json(bounds_)}};
}

MlpActor MlpActor::from_json(const nlohmann::json& j) {
  MlpActor a;
  a.net_ = Mlp::from_json(require(j, "net"));
  a.norm_ = Normalizer::from_json(require(j, "input"));
  a.bounds_ = box_from_json(require(j, "control_bounds"), "control_bounds");
  if (a.net_.input_dim() != a.norm_.offset.size() || a.net_.output_dim() != a.bounds_.dim()) {
    throw ConfigError("actor checkpoint shapes are inconsistent");
  }
  return a;
}

Critic::Critic(const Box& state_box, const Box& control_bounds, const std::vector<int>& hidden)
    : net_(layer_widths(state_box.dim() + control_bounds.dim(), hidden, 1), Activation::tanh,
           Activation::identity),
      state_norm_(Normalizer::for_box(state_box)),
      action_norm_(Normalizer::for_box(control_bounds)) {}

Mat Critic::inputs(const Mat& S, const Mat& A) const {
  Mat X(S.rows() + A.rows(), S.cols());
  X.topRows(S.rows()) = state_norm_.apply(S);
  X.bottomRows(A.rows()) = action_norm_.apply(A);
  return X;
}

double Critic::eval(const Vec& s, const Vec& a) const { return eval_batch(s, a)(0, 0); }

Mat Critic::eval_batch(const Mat& S, const Mat& A, Mlp::Cache* cache) const {
  return net_.forward_batch(inputs(S, A), cache);
}

Mat Critic::backward(const Mlp::Cache& cache, const Mat& dQ, Vec* grad) const {
  Vec scratch;
  Vec& g = grad != nullptr ? *grad : scratch;
  const Mat dX = net_.backward_batch(cache, dQ, g);
  const Eigen::Index m = action_norm_.offset.size();
  return (dX.bottomRows(m).array().colwise() * action_norm_.scale.array()).matrix();
}

nlohmann::json Critic::to_json() const {
  return {{"net", net_.to_json()},
          {"state_input", state_norm_.to_json()},
          {"action_input", action_norm_.to_json()}};
}

Critic Critic::from_json(const nlohmann::json& j) {
  Critic c;
  c.net_ = Mlp::from_json(require(j, "net"));
  c.state_norm_ = Normalizer::from_json(require(j, "state_input"));
  c.action_norm_ = Normalizer::from_json(require(j, "action_input"));
  if (c.net_.input_dim() != c.state_norm_.offset.size() + c.action_norm_.offset.size() ||
      c.net_.output_dim() != 1) {
    throw ConfigError("critic checkpoint shapes are inconsistent");
  }
  return c;
}

SwitchedPolicy::SwitchedPolicy(std::vector<BufferSpec> buffers, MlpActor mlp)
    : buffers_(std::move(buffers)), mlp_(std::move(mlp)) {
  check_disjoint(buffers_);
  const Eigen::Index m = mlp_.control_bounds().dim();
  for (const auto& b : buffers_) {
    affine_.push_back({Mat::Zero(m, b.bounds.dim()), mlp_.control_bounds().center()});
  }
}

std::optional<std::size_t> SwitchedPolicy::region(ModeId mode, const Vec& s) const {
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    if (buffers_[i].mode == mode && membership(buffers_[i], s)) return i;
  }
  return std::nullopt;
}

Vec SwitchedPolicy::act(ModeId mode, const Vec& s) const {
  if (auto r = region(mode, s)) return control_bounds().clamp(affine_[*r].pre_clamp(s));
  return mlp_.act(s);
}

nlohmann::json checkpoint_to_json(const PolicyCheckpoint& c) {
  nlohmann::json j;
  j["format"] = "hsrl-checkpoint-1";
  j["config_hash"] = c.config_hash;
  j["stage"] = c.stage;
  j["mlp_actor"] = c.policy.mlp().to_json();
  j["critics"] = {c.critic1.to_json(), c.critic2.to_json()};
  j["affine_actors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < c.policy.buffers().size(); ++i) {
    j["affine_actors"].push_back({{"buffer", c.policy.buffers()[i].name},
                                  {"D", mat_to_json(c.policy.affine()[i].D)},
                                  {"e", vec_to_json(c.policy.affine()[i].e)}});
  }
  return j;
}

PolicyCheckpoint checkpoint_from_json(const nlohmann::json& j, std::vector<BufferSpec> buffers) {
  if (value_or<std::string>(j, "format", "") != "hsrl-checkpoint-1") {
    throw ConfigError("not a policy checkpoint");
  }
  PolicyCheckpoint c;
  c.config_hash = value_or<std::string>(j, "config_hash", "");
  c.stage = value_or<int>(j, "stage", 0);
  c.policy = SwitchedPolicy(std::move(buffers), MlpActor::from_json(require(j, "mlp_actor")));
  const auto& critics = require(j, "critics");
  if (!critics.is_array() || critics.size() != 2) throw ConfigError("checkpoint needs two critics");
  c.critic1 = Critic::from_json(critics[0]);
  c.critic2 = Critic::from_json(critics[1]);
  if (j.contains("affine_actors")) {
    for (const auto& ja : j.at("affine_actors")) {
      const auto name = require(ja, "buffer").get<std::string>();
      for (std::size_t i = 0; i < c.policy.buffers().size(); ++i) {
        if (c.policy.buffers()[i].name != name) continue;
        AffineActor a{mat_from_json(require(ja, "D"), "D"), vec_from_json(require(ja, "e"), "e")};
        if (a.D.rows() != c.policy.affine()[i].D.rows() || a.D.cols() != c.policy.affine()[i].D.cols() ||
            a.e.size() != c.policy.affine()[i].e.size()) {
          throw ConfigError("affine actor '" + name + "' has wrong shape");
        }
        c.policy.affine()[i] = std::move(a);
      }
    }
  }
  return c;
}

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt) {
  write_json_file(path, checkpoint_to_json(ckpt));
}

PolicyCheckpoint load_checkpoint(const std::string& path, std::vector<BufferSpec> buffers) {
  return checkpoint_from_json(read_json_file(path), std::move(buffers));
}

}  // namespace hsrl
