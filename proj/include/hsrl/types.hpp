#ifndef HSRL_TYPES_HPP
#define HSRL_TYPES_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <compare>
#include <stdexcept>
#include <string>

namespace hsrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Index of a discrete mode q_i of a hybrid automaton.
struct ModeId {
  std::size_t index = 0;

  constexpr ModeId() = default;
  constexpr explicit ModeId(std::size_t i) : index(i) {}
  auto operator<=>(const ModeId&) const = default;
};

/// Closed axis-aligned box [lo, hi] in R^k.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lower, Vec upper);

  Eigen::Index dim() const { return lo.size(); }
  bool contains(const Vec& x, double tol = 0.0) const;
  Vec center() const { return 0.5 * (lo + hi); }
  Vec half_width() const { return 0.5 * (hi - lo); }
  Vec clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
  double volume() const { return (hi - lo).prod(); }
  bool degenerate() const { return ((hi - lo).array() <= 0.0).any(); }
};

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HSRL_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

HSRL_DEFINE_ERROR(ConfigError)
HSRL_DEFINE_ERROR(NoValidMode)
HSRL_DEFINE_ERROR(AmbiguousEvent)
HSRL_DEFINE_ERROR(DegenerateConstraint)
HSRL_DEFINE_ERROR(InvalidBuffer)
HSRL_DEFINE_ERROR(IllConditioned)
HSRL_DEFINE_ERROR(NonFiniteDynamics)
HSRL_DEFINE_ERROR(StepTooLarge)
HSRL_DEFINE_ERROR(Divergence)
HSRL_DEFINE_ERROR(NonFiniteLoss)
HSRL_DEFINE_ERROR(CertificateUnreachable)

#undef HSRL_DEFINE_ERROR

inline Box::Box(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper)) {
  if (lo.size() != hi.size()) {
    throw ConfigError("box bounds have mismatched dimensions");
  }
  if ((lo.array() > hi.array()).any()) {
    throw ConfigError("box lower bound exceeds upper bound");
  }
}

inline bool Box::contains(const Vec& x, double tol) const {
  if (x.size() != lo.size()) return false;
  return ((x.array() >= lo.array() - tol) && (x.array() <= hi.array() + tol)).all();
}

}  // namespace hsrl

#endif  // HSRL_TYPES_HPP
