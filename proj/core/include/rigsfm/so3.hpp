#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace rigsfm {

/// Tangent-space element of SO(3): rotation axis scaled by the angle in
/// radians. The canonical form returned by Log() has norm in [0, pi].
using AxisAngle = Eigen::Vector3d;

/// A rotation in SO(3).
///
/// Stored as a unit quaternion with w >= 0 so that composition chains stay
/// orthonormal to machine precision. The external contract is the matrix
/// action on vectors; Matrix() materializes the 3x3 representation.
class Rotation {
 public:
  Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}

  static Rotation Identity() { return Rotation(); }

  /// Wraps a quaternion, normalizing and canonicalizing the sign.
  static Rotation FromQuaternion(const Eigen::Quaterniond& q);

  /// Wraps a matrix that is already orthonormal (det +1) up to roundoff.
  /// Use ProjectToSO3() for matrices that may be further away.
  static Rotation FromMatrix(const Eigen::Matrix3d& m);

  static Rotation AboutAxis(const Eigen::Vector3d& axis, double angle);

  Eigen::Matrix3d Matrix() const { return q_.toRotationMatrix(); }

  /// Unit quaternion with w >= 0 (Hamilton convention).
  const Eigen::Quaterniond& Quaternion() const { return q_; }

  Rotation Inverse() const;

  Rotation operator*(const Rotation& rhs) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const;

  bool IsApprox(const Rotation& other, double tol = 1e-12) const;

 private:
  struct Unchecked {};
  Rotation(const Eigen::Quaterniond& q, Unchecked) : q_(q) {}

  Eigen::Quaterniond q_;
};

/// Exponential map so(3) -> SO(3) (Rodrigues). Total function; exp(0) = I.
Rotation Exp(const AxisAngle& omega);

/// Logarithm map SO(3) -> so(3). Canonical axis-angle with angle in [0, pi].
/// Stable both near the identity and near half-turn rotations.
AxisAngle Log(const Rotation& r);

/// Geodesic distance ||Log(a * b^T)|| in [0, pi].
double GeodesicDistance(const Rotation& a, const Rotation& b);

/// Nearest rotation to m in the Frobenius norm, sign-corrected to det +1.
/// Throws std::invalid_argument if m is (numerically) singular.
Rotation ProjectToSO3(const Eigen::Matrix3d& m);

struct GeodesicMedianResult {
  Rotation median;
  bool converged = false;
  int iterations = 0;
  /// Sum of geodesic distances from `median` to the samples.
  double objective = 0.0;
};

/// Weiszfeld iteration on SO(3) for the geodesic (L1) median of a sample
/// set. Seeded at the chordal mean projected to SO(3); each step averages
/// the tangent vectors at the current estimate with inverse-distance
/// weights. Iterates that collide with a sample are nudged by 1e-9 along a
/// deterministic pseudo-random tangent direction before reweighting.
///
/// A single sample is returned as-is. Empty input throws
/// std::invalid_argument. If `max_iter` is exhausted the best iterate seen
/// so far is returned with `converged == false`.
GeodesicMedianResult GeodesicMedian(std::span<const Rotation> samples,
                                    double tol = 1e-10, int max_iter = 100);

inline GeodesicMedianResult GeodesicMedian(const std::vector<Rotation>& samples,
                                           double tol = 1e-10,
                                           int max_iter = 100) {
  return GeodesicMedian(std::span<const Rotation>(samples), tol, max_iter);
}

}  // namespace rigsfm
