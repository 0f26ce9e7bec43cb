#include "rigsfm/so3.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <stdexcept>

namespace rigsfm {
namespace {

// Flips the sign so that w >= 0; ties on w == 0 are broken by the first
// nonzero vector component. Keeps serialized quaternions canonical.
Eigen::Quaterniond Canonicalize(const Eigen::Quaterniond& q) {
  const double* c = q.coeffs().data();  // x y z w
  double key = c[3];
  for (int i = 0; key == 0.0 && i < 3; ++i) key = c[i];
  if (key < 0.0) {
    return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  }
  return q;
}

// Normalizes only when the squared norm has drifted; products with exact
// identity factors then preserve the operand bit for bit.
Eigen::Quaterniond NormalizeIfNeeded(const Eigen::Quaterniond& q) {
  const double n2 = q.squaredNorm();
  if (std::abs(n2 - 1.0) > 8.0 * std::numeric_limits<double>::epsilon()) {
    return q.normalized();
  }
  return q;
}

}  // namespace

Rotation Rotation::FromQuaternion(const Eigen::Quaterniond& q) {
  if (!(q.squaredNorm() > 0.0) || !q.coeffs().allFinite()) {
    throw std::invalid_argument("Rotation::FromQuaternion: non-normalizable quaternion");
  }
  return Rotation(Canonicalize(NormalizeIfNeeded(q)), Unchecked{});
}

Rotation Rotation::FromMatrix(const Eigen::Matrix3d& m) {
  return FromQuaternion(Eigen::Quaterniond(m));
}

Rotation Rotation::AboutAxis(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0) {
    throw std::invalid_argument("Rotation::AboutAxis: zero axis");
  }
  return Exp((angle / n) * axis);
}

Rotation Rotation::Inverse() const {
  return Rotation(Canonicalize(q_.conjugate()), Unchecked{});
}

Rotation Rotation::operator*(const Rotation& rhs) const {
  return Rotation(Canonicalize(NormalizeIfNeeded(q_ * rhs.q_)), Unchecked{});
}

Eigen::Vector3d Rotation::operator*(const Eigen::Vector3d& v) const {
  return q_ * v;
}

bool Rotation::IsApprox(const Rotation& other, double tol) const {
  return GeodesicDistance(*this, other) <= tol;
}

Rotation Exp(const AxisAngle& omega) {
  const double theta2 = omega.squaredNorm();
  double c_half;      // cos(theta / 2)
  double sinc_half;   // sin(theta / 2) / theta
  if (theta2 < 1e-8) {
    // Taylor series; avoids 0/0 at the identity.
    c_half = 1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0;
    sinc_half = 0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0;
  } else {
    const double theta = std::sqrt(theta2);
    c_half = std::cos(0.5 * theta);
    sinc_half = std::sin(0.5 * theta) / theta;
  }
  return Rotation::FromQuaternion(Eigen::Quaterniond(
      c_half, sinc_half * omega.x(), sinc_half * omega.y(), sinc_half * omega.z()));
}

AxisAngle Log(const Rotation& r) {
  const Eigen::Quaterniond& q = r.Quaternion();  // w >= 0, angle in [0, pi]
  const Eigen::Vector3d v = q.vec();
  const double w = std::abs(q.w());
  const double vn2 = v.squaredNorm();
  const double vn = std::sqrt(vn2);
  double k;  // theta / ||v||
  if (vn < 1e-3) {
    // 2*atan2(vn, w)/vn expanded around vn = 0; division-free in vn.
    const double u = vn2 / (w * w);
    k = (2.0 / w) * (1.0 - u / 3.0 + u * u / 5.0);
  } else {
    k = 2.0 * std::atan2(vn, w) / vn;
  }
  return k * v;
}

double GeodesicDistance(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond d = a.Quaternion() * b.Quaternion().conjugate();
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

Rotation ProjectToSO3(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d& sv = svd.singularValues();
  if (!(sv(2) > 1e-12 * sv(0)) || !m.allFinite()) {
    throw std::invalid_argument("ProjectToSO3: matrix is singular or non-finite");
  }
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) = -u.col(2);
  }
  return Rotation::FromMatrix(u * v.transpose());
}

GeodesicMedianResult GeodesicMedian(std::span<const Rotation> samples,
                                    double tol, int max_iter) {
  if (samples.empty()) {
    throw std::invalid_argument("GeodesicMedian: empty sample set");
  }
  const auto objective = [&samples](const Rotation& x) {
    double sum = 0.0;
    for (const Rotation& s : samples) sum += GeodesicDistance(x, s);
    return sum;
  };
  if (samples.size() == 1) {
    return {samples[0], true, 0, 0.0};
  }

  // Chordal mean seed. The accumulated matrix can be singular for
  // antipodal sample sets; fall back to the first sample.
  Rotation x;
  {
    Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
    for (const Rotation& s : samples) acc += s.Matrix();
    try {
      x = ProjectToSO3(acc);
    } catch (const std::invalid_argument&) {
      x = samples[0];
    }
  }

  GeodesicMedianResult result;
  result.median = x;
  result.objective = objective(x);

  std::mt19937_64 rng(0x5eed5eedULL);  // deterministic safeguard directions
  std::vector<Eigen::Vector3d> tangents(samples.size());
  int it = 0;
  for (; it < max_iter; ++it) {
    bool coincident = true;
    while (coincident) {
      coincident = false;
      for (size_t i = 0; i < samples.size(); ++i) {
        tangents[i] = Log(samples[i] * x.Inverse());
        if (tangents[i].norm() < 1e-12) {
          coincident = true;
          break;
        }
      }
      if (coincident) {
        // Weiszfeld safeguard: nudge off the sample before reweighting.
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
        if (dir.norm() == 0.0) dir = Eigen::Vector3d::UnitX();
        x = Exp(1e-9 * dir.normalized()) * x;
      }
    }

    Eigen::Vector3d num = Eigen::Vector3d::Zero();
    double den = 0.0;
    for (const Eigen::Vector3d& t : tangents) {
      const double norm = t.norm();
      num += t / norm;
      den += 1.0 / norm;
    }
    const Eigen::Vector3d step = num / den;
    x = Exp(step) * x;

    const double obj = objective(x);
    if (obj < result.objective) {
      result.objective = obj;
      result.median = x;
    }
    if (step.norm() < tol) {
      result.converged = true;
      ++it;
      break;
    }
  }
  result.iterations = it;

  // The Weiszfeld path never ends above the best sample.
  for (const Rotation& s : samples) {
    const double obj = objective(s);
    if (obj < result.objective) {
      result.objective = obj;
      result.median = s;
    }
  }
  return result;
}

}  // namespace rigsfm
