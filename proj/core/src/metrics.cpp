#include "rigsfm/metrics.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rigsfm {
namespace {

constexpr double kRadToDeg = 180.0 / EIGEN_PI;

Eigen::Matrix3Xd ToMatrix(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Matrix3Xd m(3, pts.size());
  for (size_t i = 0; i < pts.size(); ++i) m.col(i) = pts[i];
  return m;
}

// Second singular value of the centered point cloud, relative to the first.
bool IsCollinear(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Matrix3Xd m = ToMatrix(pts);
  const Eigen::Vector3d mean = m.rowwise().mean();
  m.colwise() -= mean;
  Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(m);
  const auto& sv = svd.singularValues();
  return sv(0) <= 0.0 || sv(1) < 1e-6 * sv(0);
}

}  // namespace

Similarity AlignSimilarity(const std::vector<Eigen::Vector3d>& src,
                           const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw std::invalid_argument("AlignSimilarity: need >= 3 correspondences");
  }
  const Eigen::Matrix4d t =
      Eigen::umeyama(ToMatrix(src), ToMatrix(dst), /*with_scaling=*/true);
  Similarity sim;
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  sim.scale = std::cbrt(sr.determinant());
  sim.rotation = Rotation::FromMatrix(sr / sim.scale);
  sim.translation = t.topRightCorner<3, 1>();
  return sim;
}

Similarity AlignCameras(const std::map<std::int64_t, PoseRecord>& estimated,
                        const std::map<std::int64_t, PoseRecord>& truth) {
  if (estimated.size() != truth.size()) {
    throw std::invalid_argument("AlignCameras: mismatched camera sets");
  }
  std::vector<Eigen::Vector3d> src, dst;
  src.reserve(estimated.size());
  dst.reserve(truth.size());
  std::vector<const PoseRecord*> src_poses, dst_poses;
  for (const auto& [id, est] : estimated) {
    const auto it = truth.find(id);
    if (it == truth.end()) {
      throw std::invalid_argument("AlignCameras: camera " + std::to_string(id) +
                                  " missing from ground truth");
    }
    src.push_back(est.position);
    dst.push_back(it->second.position);
    src_poses.push_back(&est);
    dst_poses.push_back(&it->second);
  }
  if (src.size() < 3) {
    throw std::invalid_argument("AlignCameras: need >= 3 common cameras");
  }

  if (IsCollinear(dst) || IsCollinear(src)) {
    // Virtual forward offsets make the Procrustes problem well-posed on
    // collinear trajectories; each side uses its own camera orientations.
    const auto extent = [](const std::vector<Eigen::Vector3d>& pts) {
      Eigen::Vector3d lo = pts.front(), hi = pts.front();
      for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
      return (hi - lo).norm();
    };
    const double src_step = std::max(extent(src) / 100.0, 1e-6);
    const double dst_step = std::max(extent(dst) / 100.0, 1e-6);
    const size_t n = src.size();
    // Two camera axes per view: forward alone degenerates again when the
    // cameras look along the trajectory.
    for (const Eigen::Vector3d axis :
         {Eigen::Vector3d(0.0, 0.0, 1.0), Eigen::Vector3d(1.0, 0.0, 0.0)}) {
      for (size_t k = 0; k < n; ++k) {
        src.push_back(src[k] + src_poses[k]->rotation.Inverse() * axis * src_step);
        dst.push_back(dst[k] + dst_poses[k]->rotation.Inverse() * axis * dst_step);
      }
    }
  }
  return AlignSimilarity(src, dst);
}

ErrorReport PoseErrors(const std::map<std::int64_t, PoseRecord>& estimated,
                       const std::map<std::int64_t, PoseRecord>& truth) {
  if (estimated.size() != truth.size()) {
    throw std::invalid_argument("PoseErrors: image sets differ in size");
  }
  for (const auto& [id, pose] : estimated) {
    if (!truth.count(id)) {
      throw std::invalid_argument("PoseErrors: image " + std::to_string(id) +
                                  " missing from ground truth");
    }
  }
  const Similarity sim = AlignCameras(estimated, truth);

  ErrorReport report;
  std::vector<double> rot_errors, pos_errors;
  rot_errors.reserve(estimated.size());
  pos_errors.reserve(estimated.size());
  for (const auto& [id, est] : estimated) {
    const PoseRecord& gt = truth.at(id);
    // Aligned estimate rotation: R_est * Q^T for world map x' = sQx + t.
    const double rot_deg =
        GeodesicDistance(est.rotation * sim.rotation.Inverse(), gt.rotation) *
        kRadToDeg;
    const double pos = (sim.Apply(est.position) - gt.position).norm();
    rot_errors.push_back(rot_deg);
    pos_errors.push_back(pos);
    report.per_image[id] = {rot_deg, pos};
  }
  report.median_rotation_deg = Median(rot_errors);
  report.mean_rotation_deg =
      std::accumulate(rot_errors.begin(), rot_errors.end(), 0.0) /
      rot_errors.size();
  report.median_position = Median(pos_errors);
  report.mean_position =
      std::accumulate(pos_errors.begin(), pos_errors.end(), 0.0) /
      pos_errors.size();
  return report;
}

std::vector<double> RotationFieldErrors(
    const std::map<std::int64_t, Rotation>& estimated,
    const std::map<std::int64_t, Rotation>& truth) {
  if (estimated.size() != truth.size()) {
    throw std::invalid_argument("RotationFieldErrors: sets differ in size");
  }
  // Consistent estimates satisfy R_est = R_true * G; absorb the best-fit G.
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (const auto& [id, est] : estimated) {
    acc += truth.at(id).Matrix().transpose() * est.Matrix();
  }
  Rotation gauge;
  try {
    gauge = ProjectToSO3(acc);
  } catch (const std::invalid_argument&) {
    gauge = truth.begin()->second.Inverse() * estimated.begin()->second;
  }
  std::vector<double> errors;
  errors.reserve(estimated.size());
  for (const auto& [id, est] : estimated) {
    errors.push_back(GeodesicDistance(est, truth.at(id) * gauge) * kRadToDeg);
  }
  return errors;
}

double Median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("Median: empty input");
  }
  // Lower middle order statistic for even counts.
  const size_t k = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

std::string ErrorReportJson(const ErrorReport& report) {
  nlohmann::ordered_json doc;
  doc["median_rotation_deg"] = report.median_rotation_deg;
  doc["mean_rotation_deg"] = report.mean_rotation_deg;
  doc["median_position"] = report.median_position;
  doc["mean_position"] = report.mean_position;
  nlohmann::ordered_json per_image = nlohmann::ordered_json::array();
  for (const auto& [id, errors] : report.per_image) {
    per_image.push_back({{"image_id", id},
                         {"rotation_deg", errors.first},
                         {"position", errors.second}});
  }
  doc["per_image"] = std::move(per_image);
  return doc.dump(2) + "\n";
}

std::string ErrorReportTable(const ErrorReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-22s %12s %12s\n"
                "%-22s %12.6f %12.6f\n"
                "%-22s %12.6f %12.6f\n",
                "metric", "median", "mean",
                "rotation_error_deg", report.median_rotation_deg,
                report.mean_rotation_deg,
                "position_error", report.median_position, report.mean_position);
  return buf;
}

}  // namespace rigsfm
