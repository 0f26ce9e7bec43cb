#pragma once

#include "rigsfm/io.hpp"
#include "rigsfm/scene.hpp"

#include <map>
#include <string>
#include <vector>

namespace rigsfm {

struct Similarity {
  double scale = 1.0;
  Rotation rotation;
  Eigen::Vector3d translation{0.0, 0.0, 0.0};

  Eigen::Vector3d Apply(const Eigen::Vector3d& v) const {
    return scale * (rotation * v) + translation;
  }
};

/// Closed-form least-squares similarity (orthogonal Procrustes with scale)
/// mapping src points onto dst: min sum ||s R src_i + t - dst_i||^2.
/// Requires >= 3 non-collinear correspondences.
Similarity AlignSimilarity(const std::vector<Eigen::Vector3d>& src,
                           const std::vector<Eigen::Vector3d>& dst);

/// Similarity aligning estimated camera centers onto ground truth. Collinear
/// configurations are disambiguated by augmenting each side with virtual
/// points offset along its own camera forward axes, which pins the rotation
/// about the trajectory axis. Throws on fewer than 3 common cameras.
Similarity AlignCameras(const std::map<std::int64_t, PoseRecord>& estimated,
                        const std::map<std::int64_t, PoseRecord>& truth);

struct ErrorReport {
  double median_rotation_deg = 0.0;
  double mean_rotation_deg = 0.0;
  double median_position = 0.0;
  double mean_position = 0.0;
  /// Per-image residuals keyed by image id: (rotation deg, position).
  std::map<std::int64_t, std::pair<double, double>> per_image;
};

/// Pose accuracy after similarity alignment of the estimate onto the truth:
/// rotation error is the geodesic distance in degrees with the alignment
/// rotation absorbed, position error the Euclidean distance in scene units.
/// Image sets must match exactly.
ErrorReport PoseErrors(const std::map<std::int64_t, PoseRecord>& estimated,
                       const std::map<std::int64_t, PoseRecord>& truth);

/// Geodesic errors (degrees) of a rotation field against ground truth with
/// the best-fit right gauge rotation absorbed; for rotation-only pipelines
/// where no positions exist yet.
std::vector<double> RotationFieldErrors(
    const std::map<std::int64_t, Rotation>& estimated,
    const std::map<std::int64_t, Rotation>& truth);

/// Lower-middle order statistic for even counts; deterministic.
double Median(std::vector<double> values);

std::string ErrorReportJson(const ErrorReport& report);
/// Aligned plain-text rendering of the summary metrics.
std::string ErrorReportTable(const ErrorReport& report);

}  // namespace rigsfm
