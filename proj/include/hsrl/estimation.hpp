#ifndef HSRL_ESTIMATION_HPP
#define HSRL_ESTIMATION_HPP

#include "hsrl/geometry.hpp"
#include "hsrl/hybrid.hpp"

#include <json.hpp>

namespace hsrl {

struct EstimationOptions {
  int grid_per_dim = 9;       // state coordinates
  int control_grid = 5;       // control coordinates
  double margin_factor = 2.0;
  int order = 1;
  double flow_step = 1e-4;    // order 2: held-control flow step for the derivative
  double rank_tolerance = 1e-10;
};

/// Affine surrogate and residual bound for one mode over one buffer.
///
/// Order 1 fits the full vector field f ~ A s + B u + c (the least-squares fit
/// commutes with the output row, so C A, C B, C c is the best fit of C f).
/// Order 2 fits the scalar second output derivative along the held-control
/// flow; A, B, c are then 1 x n, 1 x m and length 1.
struct ApproximationMeasure {
  double epsilon = 0.0;
  Mat A;
  Mat B;
  Vec c;
  std::size_t sample_count = 0;  // fit + verification samples
  double margin_factor = 2.0;
  int derivative_order = 1;
  int grid = 0;
  double max_fit_residual = 0.0;
  double max_verification_residual = 0.0;
};

ApproximationMeasure estimate_epsilon(const DynamicsHandle& dynamics, ModeId mode,
                                      const BufferSpec& buffer, const RowVec& output_row,
                                      const Box& control_box, const EstimationOptions& options = {});

/// d/dt of c f(s, u) along the flow with u held, by central differences of
/// one RK4 step forward and backward.
double held_control_second_derivative(const DynamicsHandle& dynamics, ModeId mode,
                                      const RowVec& output_row, const Vec& s, const Vec& u,
                                      double h);

/// Points of the regular grid over box (per-coordinate counts).
std::vector<Vec> grid_points(const Box& box, const std::vector<int>& counts);

nlohmann::json measure_to_json(const ApproximationMeasure& m);
ApproximationMeasure measure_from_json(const nlohmann::json& j);

}  // namespace hsrl

#endif  // HSRL_ESTIMATION_HPP
