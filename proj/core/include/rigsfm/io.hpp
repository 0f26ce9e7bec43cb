#pragma once

#include "rigsfm/scene.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace rigsfm {

/// Parses the JSON view-graph interchange document. All identifiers must be
/// non-negative integers; duplicate edges are rejected rather than merged.
/// Throws std::runtime_error with a descriptive message on malformed input.
ViewGraph ParseViewGraphJson(const std::string& text);

/// Canonical serialization: images/intrinsics/tracks sorted by id, edges by
/// (i, j), observations by image id, quaternions with w >= 0. Feeding the
/// output back through ParseViewGraphJson and serializing again is
/// byte-identical.
std::string SerializeViewGraphJson(const ViewGraph& graph);

ViewGraph LoadViewGraph(const std::filesystem::path& path);
void SaveViewGraph(const ViewGraph& graph, const std::filesystem::path& path);

struct PoseRecord {
  Rotation rotation;
  Eigen::Vector3d position{0.0, 0.0, 0.0};
};

/// `<id> qw qx qy qz x y z` per line, full round-trip precision.
void WritePoseFile(const std::filesystem::path& path,
                   const std::map<std::int64_t, PoseRecord>& poses);
std::map<std::int64_t, PoseRecord> ReadPoseFile(const std::filesystem::path& path);

/// `<point_id> X Y Z` per line.
void WritePointsFile(const std::filesystem::path& path,
                     const std::map<PointId, Eigen::Vector3d>& points);
std::map<PointId, Eigen::Vector3d> ReadPointsFile(const std::filesystem::path& path);

/// Per-image poses (R_i, c_i) derived from the state via the rig model.
std::map<std::int64_t, PoseRecord> ImagePoses(const ReconstructionState& state,
                                              const std::vector<ImageNode>& images);
std::map<std::int64_t, PoseRecord> UnitPoses(const ReconstructionState& state);
std::map<std::int64_t, PoseRecord> RigPoses(const RigCalibration& rig);

}  // namespace rigsfm
