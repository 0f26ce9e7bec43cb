#pragma once

#include "rigsfm/scene.hpp"

#include <map>
#include <vector>

namespace rigsfm {

/// Per-image global rotations R_i (world -> camera frame).
using RotationField = std::map<ImageId, Rotation>;
/// Per-unit global rotations R^g (world -> rig frame).
using UnitRotationField = std::map<UnitId, Rotation>;

/// A pairwise rotation measurement rotation_ab = R_b * R_a^T between two
/// abstract nodes (images or rigid units).
struct RelativeRotation {
  std::int64_t a = 0;
  std::int64_t b = 0;
  Rotation rotation_ab;
  std::int64_t weight = 0;  // inlier count; drives spanning-tree construction
};

struct RotationAveragingOptions {
  /// Outer iterations of the L1 (least absolute deviation) phase.
  int l1_iterations = 5;
  /// Cauchy-style IRLS scale, degrees.
  double irls_sigma_deg = 5.0;
  /// IRLS stops when the largest tangent update falls below this, degrees.
  double irls_update_tol_deg = 1e-3;
  int irls_max_iterations = 100;
};

struct RotationSolveSummary {
  /// Sum of geodesic residuals over measurements, radians.
  double initial_residual_rad = 0.0;  // after spanning-tree initialization
  double final_residual_rad = 0.0;
  int iterations = 0;
  bool converged = true;  // IRLS update tolerance reached within the budget
};

/// Robust rotation averaging over an arbitrary node set: maximum spanning
/// tree initialization from the anchor, an L1 refinement phase, then IRLS
/// with Cauchy-style weights. The anchor node holds the identity exactly.
/// Parallel measurements between one node pair are all retained as
/// residuals; their weights are summed only for spanning-tree construction.
/// Throws std::runtime_error when the measurement graph is disconnected.
std::map<std::int64_t, Rotation> AverageRotationMeasurements(
    const std::vector<std::int64_t>& nodes,
    const std::vector<RelativeRotation>& measurements, std::int64_t anchor,
    const RotationAveragingOptions& options = {},
    RotationSolveSummary* summary = nullptr);

/// Single-camera rotation averaging over all view-graph edges.
RotationField AverageRotations(const ViewGraph& graph, ImageId anchor_image,
                               const RotationAveragingOptions& options = {},
                               RotationSolveSummary* summary = nullptr);

/// Internal (rig-slot) rotations from per-image global rotations: every unit
/// containing both the reference slot and slot s contributes one estimate
/// R_s_u * R_ref_u^T, fused by the geodesic median. The reference slot is
/// the lowest slot id and maps to the identity exactly. Slots never
/// co-observed with the reference are chained through intermediate slots
/// along a maximum co-occurrence spanning tree; a slot with no chain at all
/// is an error.
std::map<SlotId, Rotation> EstimateInternalRotations(
    const RotationField& global_rotations, const std::vector<ImageNode>& images);

/// Rigid-unit rotation averaging with fixed internal rotations: every
/// inter-unit image edge yields one unit-level measurement
/// R_slot(j)^T * R_ij * R_slot(i); intra-unit edges are excluded.
UnitRotationField AverageUnitRotations(
    const ViewGraph& graph, const std::map<SlotId, Rotation>& rig_rotations,
    UnitId anchor_unit, const RotationAveragingOptions& options = {},
    RotationSolveSummary* summary = nullptr);

/// R_i = R^r * R^g for every image, re-projected onto SO(3).
RotationField ComposeCameraRotations(
    const std::map<SlotId, Rotation>& rig_rotations,
    const UnitRotationField& unit_rotations,
    const std::vector<ImageNode>& images);

}  // namespace rigsfm
