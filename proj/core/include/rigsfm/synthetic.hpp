#pragma once

#include "rigsfm/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rigsfm {

enum class TrajectoryKind { kLoop, kLine, kRandomWalk };

struct SlotSpec {
  Rotation rotation;                            // R^r
  Eigen::Vector3d translation{0.0, 0.0, 0.0};   // t^r
};

/// Ground-truth rig scene configuration. The line trajectory uses
/// non-uniform step lengths, which is what makes camera-to-camera-only
/// translation averaging scale-degenerate on collinear motion.
struct SceneConfig {
  int num_units = 2;
  std::vector<SlotSpec> slots = {SlotSpec{}};
  TrajectoryKind trajectory = TrajectoryKind::kLoop;
  double extent = 100.0;  // total trajectory length, meters
  int num_points = 500;
  /// Axis-aligned sampling box for points; empty -> derived from trajectory.
  Eigen::Vector3d point_region_min{0.0, 0.0, 0.0};
  Eigen::Vector3d point_region_max{0.0, 0.0, 0.0};
  double pixel_noise_sigma = 0.0;          // px
  double rotation_noise_sigma_deg = 0.0;   // edge rotation + direction noise
  double edge_outlier_fraction = 0.0;
  double bearing_outlier_fraction = 0.0;
  bool intra_unit_edges = true;
  bool loop_closures = true;
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  ReconstructionState truth;
  ViewGraph graph;
};

/// Deterministic scene synthesis: ground-truth rig trajectory, relative-pose
/// edges derived from the truth and then perturbed (or replaced by outliers),
/// and bearing tracks perturbed by pixel noise through the intrinsics.
/// Sequential edges between consecutive units are always present; intra-unit
/// and loop-closure edges are optional. Throws std::invalid_argument for
/// configs that yield fewer than 2 co-visible units.
SyntheticScene GenerateScene(const SceneConfig& config);

/// Strict JSON parser for SceneConfig (unknown keys rejected).
SceneConfig ParseSceneConfigJson(const std::string& text);

}  // namespace rigsfm
