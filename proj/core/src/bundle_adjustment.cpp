#include "rigsfm/bundle_adjustment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace rigsfm {
namespace {

constexpr double kMinDepth = 1e-9;

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Rotation BlockRotation(const double* q) {
  return Rotation::FromQuaternion(Eigen::Quaterniond(q[0], q[1], q[2], q[3]));
}

// Reprojection residual pi(R^r R^g (p - c^g) + t^r) - x.
// Blocks: [unit_q, unit_c, rig_q, rig_t, point, focal]. A point moving
// behind the camera during iteration produces a non-finite residual, which
// the solver treats as a rejected step.
class ReprojectionTerm final : public CostTerm {
 public:
  ReprojectionTerm(Eigen::Vector2d pixel, const Intrinsics& intrinsics)
      : pixel_(std::move(pixel)),
        principal_point_(intrinsics.principal_point) {}

  int ResidualSize() const override { return 2; }

  void Evaluate(const std::vector<const double*>& params,
                Eigen::VectorXd& residual,
                const std::vector<Eigen::MatrixXd*>* jacobians) const override {
    const Rotation unit_rot = BlockRotation(params[0]);
    const Eigen::Map<const Eigen::Vector3d> unit_pos(params[1]);
    const Rotation rig_rot = BlockRotation(params[2]);
    const Eigen::Map<const Eigen::Vector3d> rig_trans(params[3]);
    const Eigen::Map<const Eigen::Vector3d> point(params[4]);
    const double focal = params[5][0];

    const Eigen::Vector3d w = unit_rot * (point - unit_pos);  // rig frame
    const Eigen::Vector3d q = rig_rot * w + rig_trans;        // camera frame
    if (q.z() <= kMinDepth) {
      residual.setConstant(std::numeric_limits<double>::quiet_NaN());
      if (jacobians) {
        for (auto* j : *jacobians) {
          if (j) j->setZero();
        }
      }
      return;
    }
    residual.resize(2);
    residual(0) = focal * q.x() / q.z() + principal_point_.x() - pixel_.x();
    residual(1) = focal * q.y() / q.z() + principal_point_.y() - pixel_.y();

    if (!jacobians) return;
    Eigen::Matrix<double, 2, 3> dpix_dq;
    const double iz = 1.0 / q.z();
    dpix_dq << focal * iz, 0.0, -focal * q.x() * iz * iz,
        0.0, focal * iz, -focal * q.y() * iz * iz;

    const Eigen::Matrix3d r_rig = rig_rot.Matrix();
    const Eigen::Matrix3d r_cam = r_rig * unit_rot.Matrix();
    if ((*jacobians)[0]) *(*jacobians)[0] = dpix_dq * (-r_rig * Skew(w));
    if ((*jacobians)[1]) *(*jacobians)[1] = dpix_dq * (-r_cam);
    if ((*jacobians)[2]) *(*jacobians)[2] = dpix_dq * (-Skew(q - rig_trans));
    if ((*jacobians)[3]) *(*jacobians)[3] = dpix_dq;
    if ((*jacobians)[4]) *(*jacobians)[4] = dpix_dq * r_cam;
    if ((*jacobians)[5]) {
      (*jacobians)[5]->resize(2, 1);
      (*(*jacobians)[5])(0, 0) = q.x() * iz;
      (*(*jacobians)[5])(1, 0) = q.y() * iz;
    }
  }

 private:
  Eigen::Vector2d pixel_;
  Eigen::Vector2d principal_point_;
};

}  // namespace

std::vector<Observation> CollectObservations(const ViewGraph& graph,
                                             int* skipped) {
  std::unordered_map<ImageId, const ImageNode*> nodes;
  for (const ImageNode& node : graph.images) nodes.emplace(node.image_id, &node);
  std::vector<Observation> observations;
  int dropped = 0;
  for (const Track& track : graph.tracks) {
    for (const TrackObservation& obs : track.observations) {
      const auto it = nodes.find(obs.image_id);
      if (it == nodes.end()) continue;
      const Intrinsics& intr = graph.intrinsics.at(it->second->intrinsics_id);
      Observation out;
      out.image_id = obs.image_id;
      out.point_id = track.point_id;
      if (obs.bearing) {
        if ((*obs.bearing).z() <= kMinDepth) {
          ++dropped;
          continue;
        }
        out.pixel = intr.Project(*obs.bearing);
      } else {
        out.pixel = *obs.pixel;
      }
      observations.push_back(out);
    }
  }
  if (skipped) *skipped = dropped;
  return observations;
}

std::optional<Eigen::Vector2d> Reproject(const Intrinsics& intrinsics,
                                         const Rotation& rig_rotation,
                                         const Eigen::Vector3d& rig_translation,
                                         const Rotation& unit_rotation,
                                         const Eigen::Vector3d& unit_position,
                                         const Eigen::Vector3d& point) {
  const Eigen::Vector3d q =
      rig_rotation * (unit_rotation * (point - unit_position)) + rig_translation;
  if (q.z() <= kMinDepth) return std::nullopt;
  return intrinsics.Project(q);
}

BaProblem BuildBaProblem(const ReconstructionState& state,
                         const std::vector<ImageNode>& images,
                         const std::vector<Observation>& observations,
                         const BaOptions& options) {
  std::unordered_map<ImageId, const ImageNode*> nodes;
  for (const ImageNode& node : images) nodes.emplace(node.image_id, &node);

  BaProblem ba;
  LeastSquaresProblem& problem = ba.problem;

  const auto add_pose = [&problem](const Rotation& r, const Eigen::Vector3d& v) {
    const Eigen::Quaterniond& q = r.Quaternion();
    const double coeffs[4] = {q.w(), q.x(), q.y(), q.z()};
    const int qb = problem.AddBlock(std::span(coeffs, 4),
                                    &QuaternionManifold::Instance());
    const int vb = problem.AddBlock(std::span(v.data(), 3));
    return std::make_pair(qb, vb);
  };

  for (const auto& [unit, rotation] : state.unit_rotation) {
    ba.unit_blocks[unit] = add_pose(rotation, state.unit_position.at(unit));
  }
  for (const auto& [slot, rotation] : state.rig.rotation) {
    ba.slot_blocks[slot] = add_pose(rotation, state.rig.translation.at(slot));
  }
  for (const auto& [point, value] : state.points) {
    ba.point_blocks[point] = problem.AddBlock(std::span(value.data(), 3));
  }
  for (const auto& [id, intr] : state.intrinsics) {
    ba.focal_blocks[id] = problem.AddBlock(std::span(&intr.focal, 1));
  }

  // Gauge: the anchor unit and the reference slot stay fixed in both stages.
  const bool rotations_fixed = options.stage == BaStage::kRotationsFixed;
  for (const auto& [unit, blocks] : ba.unit_blocks) {
    if (rotations_fixed || unit == state.anchor_unit) {
      problem.SetConstant(blocks.first);
    }
    if (unit == state.anchor_unit) problem.SetConstant(blocks.second);
  }
  for (const auto& [slot, blocks] : ba.slot_blocks) {
    if (rotations_fixed || slot == state.rig.reference_slot) {
      problem.SetConstant(blocks.first);
    }
    if (slot == state.rig.reference_slot) problem.SetConstant(blocks.second);
  }
  const bool focal_free =
      options.refine_intrinsics && options.stage == BaStage::kFull;
  for (const auto& [id, block] : ba.focal_blocks) {
    if (!focal_free) problem.SetConstant(block);
  }

  const RobustKernel kernel = RobustKernel::Huber(options.huber_scale_px);
  for (const Observation& obs : observations) {
    const auto node_it = nodes.find(obs.image_id);
    if (node_it == nodes.end()) {
      throw std::invalid_argument("MultiCameraBa: observation references unknown image " +
                                  std::to_string(obs.image_id));
    }
    const ImageNode& node = *node_it->second;
    const auto point_it = ba.point_blocks.find(obs.point_id);
    if (point_it == ba.point_blocks.end()) continue;  // point not in the state

    // Behind-camera observations are excluded from this invocation.
    const auto projected = Reproject(
        state.intrinsics.at(node.intrinsics_id),
        state.rig.rotation.at(node.slot_id), state.rig.translation.at(node.slot_id),
        state.unit_rotation.at(node.unit_id), state.unit_position.at(node.unit_id),
        state.points.at(obs.point_id));
    if (!projected) {
      ++ba.excluded_behind_camera;
      continue;
    }

    const auto& ub = ba.unit_blocks.at(node.unit_id);
    const auto& sb = ba.slot_blocks.at(node.slot_id);
    problem.AddTerm(
        std::make_shared<ReprojectionTerm>(obs.pixel,
                                           state.intrinsics.at(node.intrinsics_id)),
        {ub.first, ub.second, sb.first, sb.second, point_it->second,
         ba.focal_blocks.at(node.intrinsics_id)},
        kernel);
    ++ba.active_observations;
  }
  return ba;
}

BaResult MultiCameraBa(const ReconstructionState& state,
                       const std::vector<ImageNode>& images,
                       const std::vector<Observation>& observations,
                       const BaOptions& options) {
  BaProblem ba = BuildBaProblem(state, images, observations, options);
  BaResult result;
  result.excluded_behind_camera = ba.excluded_behind_camera;
  result.active_observations = ba.active_observations;
  if (result.active_observations == 0) {
    throw std::invalid_argument("MultiCameraBa: no valid observations");
  }

  result.summary = LevenbergMarquardt(ba.problem, options.lm);

  result.state = state;
  for (const auto& [unit, blocks] : ba.unit_blocks) {
    result.state.unit_rotation[unit] =
        BlockRotation(ba.problem.BlockValues(blocks.first));
    result.state.unit_position[unit] =
        Eigen::Map<const Eigen::Vector3d>(ba.problem.BlockValues(blocks.second));
  }
  for (const auto& [slot, blocks] : ba.slot_blocks) {
    result.state.rig.rotation[slot] =
        BlockRotation(ba.problem.BlockValues(blocks.first));
    result.state.rig.translation[slot] =
        Eigen::Map<const Eigen::Vector3d>(ba.problem.BlockValues(blocks.second));
  }
  for (const auto& [point, block] : ba.point_blocks) {
    result.state.points[point] =
        Eigen::Map<const Eigen::Vector3d>(ba.problem.BlockValues(block));
  }
  for (const auto& [id, block] : ba.focal_blocks) {
    result.state.intrinsics[id].focal = ba.problem.BlockValues(block)[0];
  }
  return result;
}

FilterResult FilterObservations(const ReconstructionState& state,
                                const std::vector<ImageNode>& images,
                                const std::vector<Observation>& observations,
                                double max_px) {
  std::unordered_map<ImageId, const ImageNode*> nodes;
  for (const ImageNode& node : images) nodes.emplace(node.image_id, &node);

  FilterResult result;
  std::vector<Observation> kept;
  kept.reserve(observations.size());
  for (const Observation& obs : observations) {
    const ImageNode& node = *nodes.at(obs.image_id);
    const auto point_it = state.points.find(obs.point_id);
    if (point_it == state.points.end()) continue;
    const auto projected = Reproject(
        state.intrinsics.at(node.intrinsics_id),
        state.rig.rotation.at(node.slot_id), state.rig.translation.at(node.slot_id),
        state.unit_rotation.at(node.unit_id), state.unit_position.at(node.unit_id),
        point_it->second);
    if (!projected) {
      ++result.dropped_behind;
      continue;
    }
    if ((*projected - obs.pixel).norm() > max_px) {
      ++result.dropped_error;
      continue;
    }
    kept.push_back(obs);
  }

  // Prune points left with too little support.
  std::map<PointId, std::set<UnitId>> units_per_point;
  std::map<PointId, int> obs_per_point;
  for (const Observation& obs : kept) {
    units_per_point[obs.point_id].insert(nodes.at(obs.image_id)->unit_id);
    ++obs_per_point[obs.point_id];
  }
  for (const auto& [point, count] : obs_per_point) {
    if (count < 2 || units_per_point.at(point).size() < 2) {
      result.removed_points.insert(point);
    }
  }
  for (const Observation& obs : kept) {
    if (!result.removed_points.count(obs.point_id)) {
      result.observations.push_back(obs);
    }
  }
  return result;
}

}  // namespace rigsfm
