#include "hsrl/nn.hpp"

#include "hsrl/json_io.hpp"

#include <cmath>

namespace hsrl {

namespace {

// tanh through the vectorised exp; std::tanh is scalar and dominated the
// cost of a training update. Absolute error stays at a few ulp of 1.
void tanh_in_place(Mat& z) {
  z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

}  // namespace

Mlp::Mlp(std::vector<int> widths, Activation hidden, Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw ConfigError("network needs at least input and output widths");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw ConfigError("layer widths must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
  }
  params_ = Vec::Zero(total);
}

Mlp::MatMap Mlp::weight(std::size_t l) const {
  return MatMap(params_.data() + offsets_[l], widths_[l + 1], widths_[l]);
}

Eigen::Map<const Vec> Mlp::bias(std::size_t l) const {
  const Eigen::Index at = offsets_[l] + static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l];
  return Eigen::Map<const Vec>(params_.data() + at, widths_[l + 1]);
}

void Mlp::init_uniform(std::mt19937_64& rng) {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Eigen::Index len = static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
    for (Eigen::Index i = 0; i < len; ++i) params_[offsets_[l] + i] = dist(rng);
  }
}

Vec Mlp::forward(const Vec& x) const { return forward_batch(x).col(0); }

Mat Mlp::forward_batch(const Mat& X, Cache* cache) const {
  if (X.rows() != input_dim()) throw ConfigError("network input has wrong dimension");
  if (cache != nullptr) {
    cache->activations.clear();
    cache->activations.push_back(X);
  }
  Mat h = X;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Mat z = weight(l) * h;
    z.colwise() += bias(l);
    const Activation act = l + 1 == layer_count() ? output_ : hidden_;
    if (act == Activation::tanh) tanh_in_place(z);
    h = std::move(z);
    if (cache != nullptr) cache->activations.push_back(h);
  }
  return h;
}

Mat Mlp::backward_batch(const Cache& cache, const Mat& dY, Vec& grad) const {
  if (grad.size() != param_count()) grad = Vec::Zero(param_count());
  Mat delta = dY;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const Activation act = l + 1 == layer_count() ? output_ : hidden_;
    if (act == Activation::tanh) {
      delta = (delta.array() * (1.0 - cache.activations[l + 1].array().square())).matrix();
    }
    const Mat& in = cache.activations[l];
    const Eigen::Index rows = widths_[l + 1];
    const Eigen::Index cols = widths_[l];
    Eigen::Map<Mat> gW(grad.data() + offsets_[l], rows, cols);
    Eigen::Map<Vec> gb(grad.data() + offsets_[l] + rows * cols, rows);
    gW.noalias() += delta * in.transpose();
    gb += delta.rowwise().sum();
    delta = weight(l).transpose() * delta;
  }
  return delta;
}

Mlp::Gradients Mlp::forward_backward(const Vec& x, const Vec& upstream) const {
  Cache cache;
  Gradients g;
  g.output = forward_batch(x, &cache).col(0);
  if (upstream.size() != output_dim()) throw ConfigError("upstream gradient has wrong dimension");
  g.params = Vec::Zero(param_count());
  g.input = backward_batch(cache, upstream, g.params).col(0);
  return g;
}

static const char* activation_name(Activation a) {
  return a == Activation::tanh ? "tanh" : "identity";
}

static Activation activation_from(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

nlohmann::json Mlp::to_json() const {
  return {{"widths", widths_},
          {"hidden", activation_name(hidden_)},
          {"output", activation_name(output_)},
          {"params", vec_to_json(params_)}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp net(require(j, "widths").get<std::vector<int>>(),
          activation_from(value_or<std::string>(j, "hidden", "tanh")),
          activation_from(value_or<std::string>(j, "output", "identity")));
  Vec p = vec_from_json(require(j, "params"), "params");
  if (p.size() != net.param_count()) throw ConfigError("parameter count does not match widths");
  net.params() = p;
  return net;
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

void Adam::step(Vec& params, const Vec& grad) {
  if (m_.size() != params.size()) {
    m_ = Vec::Zero(params.size());
    v_ = Vec::Zero(params.size());
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

Normalizer Normalizer::for_box(const Box& box) {
  Normalizer n;
  n.offset = box.center();
  n.scale = box.half_width().cwiseMax(1e-12).cwiseInverse();
  return n;
}

nlohmann::json Normalizer::to_json() const {
  return {{"offset", vec_to_json(offset)}, {"scale", vec_to_json(scale)}};
}

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  return {vec_from_json(require(j, "offset"), "offset"), vec_from_json(require(j, "scale"), "scale")};
}

}  // namespace hsrl
