#include "rigsfm/scene.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace rigsfm {

const ImageNode* ViewGraph::FindImage(ImageId id) const {
  for (const ImageNode& node : images) {
    if (node.image_id == id) return &node;
  }
  return nullptr;
}

Rotation ReconstructionState::CameraRotation(const ImageNode& node) const {
  return rig.rotation.at(node.slot_id) * unit_rotation.at(node.unit_id);
}

Eigen::Vector3d ReconstructionState::CameraCenter(const ImageNode& node) const {
  const Rotation r_i = CameraRotation(node);
  return unit_position.at(node.unit_id) -
         r_i.Inverse() * rig.translation.at(node.slot_id);
}

Eigen::Vector3d ObservationBearing(const TrackObservation& obs,
                                   const Intrinsics& intrinsics) {
  if (obs.bearing) {
    return obs.bearing->normalized();
  }
  if (!obs.pixel) {
    throw std::invalid_argument("observation carries neither pixel nor bearing");
  }
  return intrinsics.BackProject(*obs.pixel).normalized();
}

std::vector<std::string> Validate(const ViewGraph& graph) {
  std::vector<std::string> violations;
  const auto complain = [&violations](const auto&... parts) {
    std::ostringstream out;
    (out << ... << parts);
    violations.push_back(out.str());
  };

  std::unordered_map<ImageId, const ImageNode*> by_id;
  std::set<std::pair<UnitId, SlotId>> unit_slot_pairs;
  std::unordered_map<SlotId, IntrinsicsId> slot_intrinsics;
  for (const ImageNode& node : graph.images) {
    if (!by_id.emplace(node.image_id, &node).second) {
      complain("image ", node.image_id, ": duplicate image_id");
    }
    if (!unit_slot_pairs.emplace(node.unit_id, node.slot_id).second) {
      complain("image ", node.image_id, ": duplicate (unit ", node.unit_id,
               ", slot ", node.slot_id, ") pair");
    }
    auto [it, inserted] = slot_intrinsics.emplace(node.slot_id, node.intrinsics_id);
    if (!inserted && it->second != node.intrinsics_id) {
      complain("image ", node.image_id, ": slot ", node.slot_id,
               " maps to several intrinsics ids");
    }
    if (!graph.intrinsics.count(node.intrinsics_id)) {
      complain("image ", node.image_id, ": unknown intrinsics ",
               node.intrinsics_id);
    }
  }

  for (const auto& [id, intr] : graph.intrinsics) {
    if (!(intr.focal > 0.0)) {
      complain("intrinsics ", id, ": focal must be positive");
    }
    if (intr.principal_point.x() < 0.0 ||
        intr.principal_point.x() > intr.image_size.x() ||
        intr.principal_point.y() < 0.0 ||
        intr.principal_point.y() > intr.image_size.y()) {
      complain("intrinsics ", id, ": principal point outside image bounds");
    }
  }

  std::set<std::pair<ImageId, ImageId>> edge_pairs;
  for (const RelativePoseEdge& edge : graph.edges) {
    if (edge.i == edge.j) {
      complain("edge (", edge.i, ",", edge.j, "): self loop");
    }
    if (!by_id.count(edge.i) || !by_id.count(edge.j)) {
      complain("edge (", edge.i, ",", edge.j, "): endpoint not in graph");
    }
    if (std::abs(edge.translation_ij.norm() - 1.0) > 1e-9) {
      complain("edge (", edge.i, ",", edge.j,
               "): translation direction not unit norm");
    }
    const auto key = std::minmax(edge.i, edge.j);
    if (!edge_pairs.insert(key).second) {
      complain("edge (", edge.i, ",", edge.j, "): duplicate image pair");
    }
  }

  std::unordered_set<PointId> point_ids;
  for (const Track& track : graph.tracks) {
    if (!point_ids.insert(track.point_id).second) {
      complain("track ", track.point_id, ": duplicate point_id");
    }
    if (track.observations.size() < 2) {
      complain("track ", track.point_id, ": fewer than 2 observations");
    }
    std::unordered_set<ImageId> seen;
    for (const TrackObservation& obs : track.observations) {
      if (!by_id.count(obs.image_id)) {
        complain("track ", track.point_id, ": observation references unknown image ",
                 obs.image_id);
      }
      if (!seen.insert(obs.image_id).second) {
        complain("track ", track.point_id, ": several observations in image ",
                 obs.image_id);
      }
      if (!obs.pixel && !obs.bearing) {
        complain("track ", track.point_id, ": observation in image ", obs.image_id,
                 " has neither pixel nor bearing");
      }
      if (obs.bearing && std::abs(obs.bearing->norm() - 1.0) > 1e-9) {
        complain("track ", track.point_id, ": bearing in image ", obs.image_id,
                 " not unit norm");
      }
    }
  }
  return violations;
}

}  // namespace rigsfm
