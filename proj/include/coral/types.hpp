#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace coral {

using Vec2 = Eigen::Vector2d;
/// Finger displacement command (dx, dz) in metres per control interval.
using Control = Eigen::Vector2d;

inline constexpr double kGravity = 9.81;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  if (!std::isfinite(a)) return a;
  a = std::fmod(a + pi, Scalar(2) * pi);
  if (a <= Scalar(0)) a += Scalar(2) * pi;
  return a - pi;
}

/// Planar pose in the vertical x-z plane.
struct Pose2 {
  double x = 0.0;
  double z = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, z}; }

  Eigen::Matrix2d rotation() const {
    const double c = std::cos(theta), s = std::sin(theta);
    Eigen::Matrix2d r;
    r << c, -s, s, c;
    return r;
  }

  Vec2 to_world(const Vec2& local) const { return position() + rotation() * local; }
  Vec2 to_local(const Vec2& world) const { return rotation().transpose() * (world - position()); }
  Vec2 rotate(const Vec2& local_dir) const { return rotation() * local_dir; }

  bool operator==(const Pose2&) const = default;
};

// Error taxonomy shared by all modules.

/// A numeric argument lies outside its admissible domain.
class ParameterDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two structures that must agree (label sets, dimensions) do not.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A document could not be parsed at all.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parsed document violates one or more semantic rules.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "validation failed:";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

/// The optimizer cannot produce an update (e.g. every rollout diverged).
class PlannerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coral
