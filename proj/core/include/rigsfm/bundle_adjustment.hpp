#pragma once

#include "rigsfm/least_squares.hpp"
#include "rigsfm/scene.hpp"

#include <optional>
#include <set>
#include <vector>

namespace rigsfm {

/// One reprojection measurement in pixels.
struct Observation {
  ImageId image_id = 0;
  PointId point_id = 0;
  Eigen::Vector2d pixel{0.0, 0.0};
};

/// Flattens graph tracks into pixel observations. Bearing observations are
/// converted to ideal pixels through the image's intrinsics; bearings that
/// point backwards cannot be converted and are skipped (counted).
std::vector<Observation> CollectObservations(const ViewGraph& graph,
                                             int* skipped = nullptr);

/// Pixel projection of a world point through the rig model,
/// pi(R^r R^g (p - c^g) + t^r); nullopt when the point lies behind the
/// camera (depth <= 1e-9).
std::optional<Eigen::Vector2d> Reproject(const Intrinsics& intrinsics,
                                         const Rotation& rig_rotation,
                                         const Eigen::Vector3d& rig_translation,
                                         const Rotation& unit_rotation,
                                         const Eigen::Vector3d& unit_position,
                                         const Eigen::Vector3d& point);

enum class BaStage { kRotationsFixed, kFull };

struct BaOptions {
  BaStage stage = BaStage::kRotationsFixed;
  bool refine_intrinsics = false;  // focal length only, stage kFull
  double huber_scale_px = 2.0;
  LmOptions lm;
};

struct BaResult {
  ReconstructionState state;
  LmSummary summary;
  /// Observations excluded up front because the point was behind the camera
  /// at the initial state.
  int excluded_behind_camera = 0;
  int active_observations = 0;
};

/// The assembled bundle-adjustment problem plus block lookups, exposed for
/// validation harnesses.
struct BaProblem {
  LeastSquaresProblem problem;
  std::map<UnitId, std::pair<int, int>> unit_blocks;  // (rotation, position)
  std::map<SlotId, std::pair<int, int>> slot_blocks;  // (rotation, translation)
  std::map<PointId, int> point_blocks;
  std::map<IntrinsicsId, int> focal_blocks;
  int excluded_behind_camera = 0;
  int active_observations = 0;
};

BaProblem BuildBaProblem(const ReconstructionState& state,
                         const std::vector<ImageNode>& images,
                         const std::vector<Observation>& observations,
                         const BaOptions& options);

/// Multi-camera bundle adjustment. Stage kRotationsFixed holds every
/// rotation constant; stage kFull frees them. The anchor unit pose and the
/// reference slot pose stay constant in both stages and come back
/// bit-identical. Throws std::invalid_argument when no valid observations
/// remain.
BaResult MultiCameraBa(const ReconstructionState& state,
                       const std::vector<ImageNode>& images,
                       const std::vector<Observation>& observations,
                       const BaOptions& options);

struct FilterResult {
  std::vector<Observation> observations;
  int dropped_error = 0;
  int dropped_behind = 0;
  /// Points left with < 2 observations or < 2 distinct units; their
  /// remaining observations are dropped as well.
  std::set<PointId> removed_points;
};

/// Between-stage hygiene: drops observations reprojecting worse than max_px
/// or behind the camera, then prunes under-supported points.
FilterResult FilterObservations(const ReconstructionState& state,
                                const std::vector<ImageNode>& images,
                                const std::vector<Observation>& observations,
                                double max_px);

}  // namespace rigsfm
