#ifndef HSRL_NN_HPP
#define HSRL_NN_HPP

// Small fully connected networks on Eigen with a flat parameter vector and
// hand-written reverse mode.

#include "hsrl/types.hpp"

#include <json.hpp>

#include <random>
#include <vector>

namespace hsrl {

enum class Activation { tanh, identity };

class Mlp {
 public:
  struct Cache {
    std::vector<Mat> activations;  // post-activation per layer, [0] is the input
  };

  Mlp() = default;
  Mlp(std::vector<int> widths, Activation hidden = Activation::tanh,
      Activation output = Activation::identity);

  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  std::size_t layer_count() const { return widths_.size() - 1; }
  Eigen::Index param_count() const { return params_.size(); }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Uniform in +-1/sqrt(fan_in) for weights and biases.
  void init_uniform(std::mt19937_64& rng);

  Vec forward(const Vec& x) const;
  /// Columns of X are samples.
  Mat forward_batch(const Mat& X, Cache* cache = nullptr) const;
  /// Accumulates d(sum <dY, Y>)/dparams into grad and returns dY/dX^T dY.
  Mat backward_batch(const Cache& cache, const Mat& dY, Vec& grad) const;

  struct Gradients {
    Vec output;
    Vec params;
    Vec input;
  };
  /// Output plus gradients of output . upstream w.r.t. parameters and input.
  Gradients forward_backward(const Vec& x, const Vec& upstream) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  using MatMap = Eigen::Map<const Mat>;
  MatMap weight(std::size_t layer) const;
  Eigen::Map<const Vec> bias(std::size_t layer) const;

  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;  // start of each layer's weights
  Activation hidden_ = Activation::tanh;
  Activation output_ = Activation::identity;
  Vec params_;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Vec& params, const Vec& grad);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Vec m_, v_;
  long t_ = 0;
};

/// Fixed affine input normalisation x -> (x - offset) .* scale.
struct Normalizer {
  Vec offset;
  Vec scale;

  static Normalizer for_box(const Box& box);
  Mat apply(const Mat& X) const {
    return (X.colwise() - offset).array().colwise() * scale.array();
  }
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

}  // namespace hsrl

#endif  // HSRL_NN_HPP
