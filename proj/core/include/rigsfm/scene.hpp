#pragma once

#include "rigsfm/so3.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rigsfm {

using ImageId = std::int64_t;
using UnitId = std::int64_t;
using SlotId = std::int64_t;
using PointId = std::int64_t;
using IntrinsicsId = std::int64_t;

/// One image: which rigid unit (capture instant) and which rig slot
/// (physical camera) produced it.
struct ImageNode {
  ImageId image_id = 0;
  UnitId unit_id = 0;
  SlotId slot_id = 0;
  IntrinsicsId intrinsics_id = 0;
};

/// Pinhole intrinsics, no distortion. Inputs are assumed undistorted.
struct Intrinsics {
  double focal = 0.0;                              // px
  Eigen::Vector2d principal_point{0.0, 0.0};       // px
  Eigen::Vector2d image_size{0.0, 0.0};            // width, height in px

  /// Camera-frame ray (z = 1 plane) of a pixel; not normalized.
  Eigen::Vector3d BackProject(const Eigen::Vector2d& px) const {
    return {(px.x() - principal_point.x()) / focal,
            (px.y() - principal_point.y()) / focal, 1.0};
  }

  /// Pinhole projection of a camera-frame point with z > 0.
  Eigen::Vector2d Project(const Eigen::Vector3d& p) const {
    return {focal * p.x() / p.z() + principal_point.x(),
            focal * p.y() / p.z() + principal_point.y()};
  }
};

/// Two-view relative pose: rotation_ij maps camera-i frame vectors into the
/// camera-j frame, translation_ij is the unit direction R_j*(c_i - c_j)/||.||.
struct RelativePoseEdge {
  ImageId i = 0;
  ImageId j = 0;
  Rotation rotation_ij;
  Eigen::Vector3d translation_ij{0.0, 0.0, 0.0};
  std::int64_t num_inliers = 0;
};

/// A feature observation, either as a raw pixel (interpreted through the
/// image's intrinsics) or as a precomputed unit bearing in the camera frame.
/// When both are present the bearing takes precedence.
struct TrackObservation {
  ImageId image_id = 0;
  std::optional<Eigen::Vector2d> pixel;
  std::optional<Eigen::Vector3d> bearing;
};

struct Track {
  PointId point_id = 0;
  std::vector<TrackObservation> observations;
};

struct ViewGraph {
  std::vector<ImageNode> images;
  std::map<IntrinsicsId, Intrinsics> intrinsics;
  std::vector<RelativePoseEdge> edges;
  std::vector<Track> tracks;

  const ImageNode* FindImage(ImageId id) const;
};

/// Fixed per-slot pose inside the rig frame. The reference slot is pinned to
/// (I, 0) exactly.
struct RigCalibration {
  SlotId reference_slot = 0;
  std::map<SlotId, Rotation> rotation;              // R^r
  std::map<SlotId, Eigen::Vector3d> translation;    // t^r
};

/// Global reconstruction: per-unit world pose, the rig calibration, sparse
/// points, and intrinsics. The anchor unit is pinned to (I, 0) exactly.
struct ReconstructionState {
  UnitId anchor_unit = 0;
  std::map<UnitId, Rotation> unit_rotation;         // R^g
  std::map<UnitId, Eigen::Vector3d> unit_position;  // c^g
  RigCalibration rig;
  std::map<PointId, Eigen::Vector3d> points;
  std::map<IntrinsicsId, Intrinsics> intrinsics;

  /// R_i = R^r * R^g
  Rotation CameraRotation(const ImageNode& node) const;
  /// c_i = c^g - R_i^T * t^r
  Eigen::Vector3d CameraCenter(const ImageNode& node) const;
};

/// Unit bearing of an observation in the camera frame. Pixels are lifted
/// through the intrinsics; explicit bearings win when both are present.
Eigen::Vector3d ObservationBearing(const TrackObservation& obs,
                                   const Intrinsics& intrinsics);

/// Checks every structural invariant of the graph. Returns one human-readable
/// violation per offense, each naming the offending entity; empty means valid.
std::vector<std::string> Validate(const ViewGraph& graph);

}  // namespace rigsfm
