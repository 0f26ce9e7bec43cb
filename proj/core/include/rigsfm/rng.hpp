#pragma once

#include "rigsfm/so3.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace rigsfm {

/// Deterministic random stream. All draws are formula-based on top of
/// mt19937_64 so that identical seeds give identical bytes on every
/// platform, independent of the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  std::int64_t Integer(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(Uniform() * static_cast<double>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller.
  double Normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(2.0 * EIGEN_PI * u2);
    have_spare_ = true;
    return radius * std::cos(2.0 * EIGEN_PI * u2);
  }

  double Normal(double sigma) { return sigma * Normal(); }

  Eigen::Vector2d NormalVector2(double sigma) {
    return {Normal(sigma), Normal(sigma)};
  }

  Eigen::Vector3d UnitVector() {
    Eigen::Vector3d v;
    do {
      v = {Normal(), Normal(), Normal()};
    } while (v.norm() < 1e-12);
    return v.normalized();
  }

  /// Uniform over SO(3).
  Rotation UniformRotation() {
    Eigen::Vector4d v;
    do {
      v = {Normal(), Normal(), Normal(), Normal()};
    } while (v.norm() < 1e-12);
    v.normalize();
    return Rotation::FromQuaternion(Eigen::Quaterniond(v(0), v(1), v(2), v(3)));
  }

  /// Rotation about a uniform axis by a half-normal angle of scale sigma_rad.
  Rotation SmallRotation(double sigma_rad) {
    if (sigma_rad <= 0.0) return Rotation::Identity();
    return Exp(std::abs(Normal(sigma_rad)) * UnitVector());
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rigsfm
