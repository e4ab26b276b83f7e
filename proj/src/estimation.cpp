#include "hsrl/estimation.hpp"

#include "hsrl/json_io.hpp"

#include <cmath>

namespace hsrl {

std::vector<Vec> grid_points(const Box& box, const std::vector<int>& counts) {
  const auto k = static_cast<std::size_t>(box.dim());
  if (counts.size() != k) throw ConfigError("grid counts do not match box dimension");
  std::size_t total = 1;
  for (int c : counts) {
    if (c < 1) throw ConfigError("grid needs at least one point per coordinate");
    total *= static_cast<std::size_t>(c);
  }
  std::vector<Vec> out;
  out.reserve(total);
  std::vector<int> idx(k, 0);
  for (std::size_t p = 0; p < total; ++p) {
    Vec x(box.dim());
    for (std::size_t i = 0; i < k; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      x[ii] = counts[i] == 1 ? box.center()[ii]
                             : box.lo[ii] + (box.hi[ii] - box.lo[ii]) * idx[i] / (counts[i] - 1);
    }
    out.push_back(std::move(x));
    for (std::size_t i = 0; i < k; ++i) {
      if (++idx[i] < counts[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

namespace {

Vec checked(const DynamicsHandle& f, ModeId q, const Vec& s, const Vec& u) {
  Vec out = f(q, s, u);
  if (!out.allFinite()) throw NonFiniteDynamics("dynamics returned non-finite values");
  return out;
}

Vec rk4_handle(const DynamicsHandle& f, ModeId q, const Vec& s, const Vec& u, double h) {
  const Vec k1 = checked(f, q, s, u);
  const Vec k2 = checked(f, q, s + 0.5 * h * k1, u);
  const Vec k3 = checked(f, q, s + 0.5 * h * k2, u);
  const Vec k4 = checked(f, q, s + h * k3, u);
  return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Box joint_box(const Box& states, const Box& controls) {
  const Eigen::Index n = states.dim(), m = controls.dim();
  Vec lo(n + m), hi(n + m);
  lo << states.lo, controls.lo;
  hi << states.hi, controls.hi;
  return Box(lo, hi);
}

std::vector<int> counts(Eigen::Index n, Eigen::Index m, int per_state, int per_control) {
  std::vector<int> c(static_cast<std::size_t>(n + m), per_state);
  for (Eigen::Index i = n; i < n + m; ++i) c[static_cast<std::size_t>(i)] = per_control;
  return c;
}

}  // namespace

double held_control_second_derivative(const DynamicsHandle& dynamics, ModeId mode,
                                      const RowVec& output_row, const Vec& s, const Vec& u,
                                      double h) {
  const Vec fwd = rk4_handle(dynamics, mode, s, u, h);
  const Vec bwd = rk4_handle(dynamics, mode, s, u, -h);
  return (output_row.dot(checked(dynamics, mode, fwd, u)) -
          output_row.dot(checked(dynamics, mode, bwd, u))) /
         (2.0 * h);
}

ApproximationMeasure estimate_epsilon(const DynamicsHandle& dynamics, ModeId mode,
                                      const BufferSpec& buffer, const RowVec& output_row,
                                      const Box& control_box, const EstimationOptions& options) {
  if (options.grid_per_dim < 2 || options.control_grid < 2) {
    throw ConfigError("estimation grid needs at least 2 points per coordinate");
  }
  if (options.order != 1 && options.order != 2) throw ConfigError("derivative order must be 1 or 2");
  if (!(options.margin_factor >= 1.0)) throw ConfigError("margin factor must be >= 1");
  const Eigen::Index n = buffer.bounds.dim();
  const Eigen::Index m = control_box.dim();
  if (output_row.size() != n) throw ConfigError("output row dimension mismatch");

  const Box joint = joint_box(buffer.bounds, control_box);
  const Eigen::Index outputs = options.order == 1 ? n : 1;

  auto target = [&](const Vec& x) -> Vec {
    const Vec s = x.head(n);
    const Vec u = x.tail(m);
    if (options.order == 1) return checked(dynamics, mode, s, u);
    Vec y(1);
    y[0] = held_control_second_derivative(dynamics, mode, output_row, s, u, options.flow_step);
    return y;
  };

  const auto fit_pts = grid_points(joint, counts(n, m, options.grid_per_dim, options.control_grid));
  const auto N = static_cast<Eigen::Index>(fit_pts.size());
  const Eigen::Index p = n + m;

  Mat X(N, p);
  Mat Y(N, outputs);
  for (Eigen::Index k = 0; k < N; ++k) {
    X.row(k) = fit_pts[static_cast<std::size_t>(k)].transpose();
    Y.row(k) = target(fit_pts[static_cast<std::size_t>(k)]).transpose();
  }

  // Centre and scale the regressors; the intercept then decouples.
  const RowVec mean = X.colwise().mean();
  Mat Xc = X.rowwise() - mean;
  RowVec scale = Xc.colwise().norm();
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(scale[j] > 0.0)) throw IllConditioned(buffer.name + ": degenerate sampling direction");
  }
  Xc = Xc.array().rowwise() / scale.array();
  Eigen::BDCSVD<Mat> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  if (sv[sv.size() - 1] < options.rank_tolerance * sv[0]) {
    throw IllConditioned(buffer.name + ": least-squares design is rank deficient");
  }
  const RowVec ymean = Y.colwise().mean();
  const Mat Yc = Y.rowwise() - ymean;
  Mat W = svd.solve(Yc);  // p x outputs, in scaled coordinates
  for (Eigen::Index j = 0; j < p; ++j) W.row(j) /= scale[j];
  // y ~ W^T (x - mean) + ymean
  const Mat coeffs = W.transpose();  // outputs x p
  const Vec intercept = ymean.transpose() - coeffs * mean.transpose();

  ApproximationMeasure out;
  out.A = coeffs.leftCols(n);
  out.B = coeffs.rightCols(m);
  out.c = intercept;
  out.margin_factor = options.margin_factor;
  out.derivative_order = options.order;
  out.grid = options.grid_per_dim;

  const RowVec row = options.order == 1 ? output_row : RowVec::Ones(1);
  auto residual = [&](const Vec& x, const Vec& y) {
    const Vec model = coeffs * x + intercept;
    return std::abs(row.dot(y - model));
  };

  for (Eigen::Index k = 0; k < N; ++k) {
    out.max_fit_residual = std::max(
        out.max_fit_residual, residual(fit_pts[static_cast<std::size_t>(k)], Y.row(k).transpose()));
  }
  const auto ver_pts =
      grid_points(joint, counts(n, m, 2 * options.grid_per_dim, 2 * options.control_grid));
  for (const auto& x : ver_pts) {
    out.max_verification_residual = std::max(out.max_verification_residual, residual(x, target(x)));
  }
  out.sample_count = fit_pts.size() + ver_pts.size();
  out.epsilon = options.margin_factor * std::max(out.max_fit_residual, out.max_verification_residual);
  if (!std::isfinite(out.epsilon)) throw NonFiniteDynamics(buffer.name + ": non-finite epsilon");
  return out;
}

nlohmann::json measure_to_json(const ApproximationMeasure& m) {
  return {{"epsilon", m.epsilon},
          {"A", mat_to_json(m.A)},
          {"B", mat_to_json(m.B)},
          {"c", vec_to_json(m.c)},
          {"grid", m.grid},
          {"margin", m.margin_factor},
          {"order", m.derivative_order},
          {"samples", m.sample_count},
          {"max_fit_residual", m.max_fit_residual},
          {"max_verification_residual", m.max_verification_residual}};
}

ApproximationMeasure measure_from_json(const nlohmann::json& j) {
  ApproximationMeasure m;
  m.epsilon = require(j, "epsilon").get<double>();
  m.A = mat_from_json(require(j, "A"), "A");
  m.B = mat_from_json(require(j, "B"), "B");
  m.c = vec_from_json(require(j, "c"), "c");
  m.grid = value_or<int>(j, "grid", 0);
  m.margin_factor = value_or<double>(j, "margin", 2.0);
  m.derivative_order = value_or<int>(j, "order", 1);
  m.sample_count = value_or<std::size_t>(j, "samples", 0);
  m.max_fit_residual = value_or<double>(j, "max_fit_residual", 0.0);
  m.max_verification_residual = value_or<double>(j, "max_verification_residual", 0.0);
  return m;
}

}  // namespace hsrl
