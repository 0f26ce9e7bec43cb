#pragma once

#include "rigsfm/admm.hpp"
#include "rigsfm/least_squares.hpp"
#include "rigsfm/rotation_averaging.hpp"
#include "rigsfm/scene.hpp"

#include <map>
#include <vector>

namespace rigsfm {

/// Global rigid-unit positions c^g and internal camera translations t^r.
/// The anchor unit and the reference slot are pinned to zero exactly.
struct PositionField {
  std::map<UnitId, Eigen::Vector3d> unit_position;
  std::map<SlotId, Eigen::Vector3d> internal_translation;
};

using PointField = std::map<PointId, Eigen::Vector3d>;

/// Per-edge baseline scale s_ij >= 1 from the L1 initialization.
struct BaselineScales {
  std::map<std::pair<ImageId, ImageId>, double> value;
};

struct TranslationOptions {
  double cauchy_scale = 0.1;  // chordal residual units
  double min_triangulation_angle_deg = 1.0;
  int max_track_length = 50;
  bool subsample_tracks = true;
  /// Add camera-to-point terms ||s_ik R_i^T f_ik - (p_k - c_i)||_1 (s >= 1)
  /// to the L1 initialization alongside the camera-to-camera terms. Without
  /// them the initialization cannot determine relative baseline scales on
  /// collinear trajectories. Translation-only pipelines switch this off.
  bool init_with_tracks = true;
  int threads = 1;
  AdmmOptions admm;
  LmOptions lm;
};

/// One observation ray of a track, rotated into the world frame.
struct TrackView {
  PointId point_id = 0;
  /// (image id, unit id, slot id, unit world ray R_i^T f_ik)
  struct Ray {
    ImageId image_id;
    UnitId unit_id;
    SlotId slot_id;
    Eigen::Vector3d world_ray;
  };
  std::vector<Ray> rays;
};

/// Tracks usable by the translation stages: at least two observations
/// spanning at least two units, subsampled to max_track_length (keep
/// first/last plus uniform picks) when enabled.
std::vector<TrackView> BuildTrackViews(const ViewGraph& graph,
                                       const RotationField& rotations,
                                       const TranslationOptions& options,
                                       int* dropped_short = nullptr);

/// Drops edges whose relative rotation disagrees with the averaged global
/// rotations by more than max_error_deg. Rotation-outlier edges are almost
/// always translation outliers as well, so this runs before the translation
/// stages. max_error_deg <= 0 disables the filter.
ViewGraph FilterEdgesByRotationConsistency(const ViewGraph& graph,
                                           const RotationField& rotations,
                                           double max_error_deg,
                                           int* dropped = nullptr);

struct InitPositionsResult {
  PositionField positions;
  BaselineScales scales;
  /// Jointly initialized points, present when init_with_tracks is on.
  PointField points;
  bool converged = true;
  int iterations = 0;
  double objective = 0.0;
};

/// Convex L1 initialization: min sum ||s_ij R_j^T t_ij - C_ij||_1 with
/// s_ij >= 1 over unit positions, internal translations and per-edge scales
/// (anchor unit and reference slot eliminated, start at zero with unit
/// scales), solved by ADMM. With init_with_tracks the objective also carries
/// one scaled camera-to-point term per usable track observation, jointly
/// initializing the 3D points. Throws on a disconnected unit graph.
InitPositionsResult InitPositionsL1(const ViewGraph& graph,
                                    const RotationField& rotations,
                                    const TranslationOptions& options = {});

/// An assembled angle-based problem plus the block lookup tables, exposed so
/// validation harnesses can probe costs and Jacobians directly.
struct TranslationProblem {
  LeastSquaresProblem problem;
  std::map<UnitId, int> unit_block;
  std::map<SlotId, int> slot_block;
  std::map<PointId, int> point_block;
  std::vector<int> aux_blocks;  // bilinear d unknowns, when present
  UnitId anchor_unit = 0;
  SlotId reference_slot = 0;
};

/// Camera-to-camera angle objective over {c^g, t^r}: the non-bilinear form
/// || R_j^T t_ij - C_ij/||C_ij|| ||_2 or, with `bilinear`, the form
/// || R_j^T t_ij - d_ij C_ij ||_2 with the auxiliary inverse-length d_ij.
TranslationProblem BuildEdgeAngleProblem(const ViewGraph& graph,
                                         const RotationField& rotations,
                                         const PositionField& init,
                                         const TranslationOptions& options,
                                         bool bilinear);

/// Camera-to-point angle objective over {c^g, t^r, p} (plus d_ik when
/// `bilinear`), built from the usable track views.
TranslationProblem BuildTrackAngleProblem(const ViewGraph& graph,
                                          const RotationField& rotations,
                                          const PositionField& init,
                                          const PointField& points,
                                          const TranslationOptions& options,
                                          bool bilinear);

struct RefineResult {
  PositionField positions;
  LmSummary summary;
};

/// Levenberg-Marquardt refinement of the non-bilinear camera-to-camera
/// objective, Cauchy kernel, gauge handled by damping, output re-anchored.
RefineResult RefinePositionsAngle(const ViewGraph& graph,
                                  const RotationField& rotations,
                                  const PositionField& init,
                                  const TranslationOptions& options = {});

struct TriangulationResult {
  PointField points;
  int attempted = 0;
  int dropped_short = 0;      // fewer than 2 observations over 2 units
  int dropped_low_angle = 0;  // max pairwise ray angle below threshold
  int dropped_behind = 0;     // negative depth in more than half the views
};

/// Independent per-point convex L1 triangulation in cross-product form,
/// seeded at the two-view midpoint of the first observation pair.
TriangulationResult TriangulateL1(const ViewGraph& graph,
                                  const RotationField& rotations,
                                  const PositionField& positions,
                                  const TranslationOptions& options = {});

struct JointRefineResult {
  PositionField positions;
  PointField points;
  LmSummary summary;
};

/// Joint non-bilinear camera-to-point refinement over {c^g, p, t^r}.
JointRefineResult JointRefine(const ViewGraph& graph,
                              const RotationField& rotations,
                              const PositionField& positions,
                              const PointField& points,
                              const TranslationOptions& options = {});

enum class AblationKind {
  kTransOnlyBilinear,
  kTransOnlyNonbilinear,
  kTracksOnlyBilinear,
  kTracksOnlyNonbilinear,
  kHybridBilinear,
  kHybridNonbilinear,
};

const char* ToString(AblationKind kind);

struct AblationOutcome {
  AblationKind kind = AblationKind::kHybridNonbilinear;
  PositionField positions;
  PointField points;
  bool has_points = false;
};

/// One cell of the input-type x objective-form ablation matrix. Trans-only
/// variants refine from the L1 initialization; tracks-only variants start
/// from positions and points drawn uniformly in the unit cube (fixed seed);
/// hybrid variants run the staged initialization before the final
/// refinement.
AblationOutcome RunAblationVariant(AblationKind kind, const ViewGraph& graph,
                                   const RotationField& rotations,
                                   const TranslationOptions& options,
                                   std::uint64_t seed);

}  // namespace rigsfm
