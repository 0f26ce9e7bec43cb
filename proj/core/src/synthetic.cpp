#include "rigsfm/synthetic.hpp"

#include "rigsfm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace rigsfm {
namespace {

constexpr double kDegToRad = EIGEN_PI / 180.0;
constexpr double kMinDepth = 1.0;
constexpr int kMaxTrackObservations = 24;

void CheckConfig(const SceneConfig& cfg) {
  if (cfg.num_units < 2) throw std::invalid_argument("scene: num_units must be >= 2");
  if (cfg.slots.empty()) throw std::invalid_argument("scene: at least one slot");
  if (cfg.extent <= 0.0) throw std::invalid_argument("scene: extent must be positive");
  if (cfg.num_points < 0) throw std::invalid_argument("scene: num_points < 0");
  if (cfg.pixel_noise_sigma < 0.0 || cfg.rotation_noise_sigma_deg < 0.0) {
    throw std::invalid_argument("scene: noise sigmas must be >= 0");
  }
  if (cfg.edge_outlier_fraction < 0.0 || cfg.edge_outlier_fraction >= 1.0 ||
      cfg.bearing_outlier_fraction < 0.0 || cfg.bearing_outlier_fraction >= 1.0) {
    throw std::invalid_argument("scene: outlier fractions must be in [0, 1)");
  }
}

// World -> unit-frame rotation with the camera forward (+z) axis along the
// heading; headings stay in the xy-plane so world +z is a valid up vector.
Rotation HeadingRotation(const Eigen::Vector3d& heading) {
  const Eigen::Vector3d z = heading.normalized();
  const Eigen::Vector3d x = Eigen::Vector3d::UnitZ().cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d m;
  m.row(0) = x;
  m.row(1) = y;
  m.row(2) = z;
  return Rotation::FromMatrix(m);
}

struct Trajectory {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> headings;
};

Trajectory MakeTrajectory(const SceneConfig& cfg, Rng& rng) {
  Trajectory traj;
  const int n = cfg.num_units;
  traj.positions.reserve(n);
  traj.headings.reserve(n);
  switch (cfg.trajectory) {
    case TrajectoryKind::kLoop: {
      const double radius = cfg.extent / (2.0 * EIGEN_PI);
      for (int u = 0; u < n; ++u) {
        const double theta = 2.0 * EIGEN_PI * u / n;
        traj.positions.emplace_back(radius * std::cos(theta),
                                    radius * std::sin(theta), 0.0);
        traj.headings.emplace_back(-std::sin(theta), std::cos(theta), 0.0);
      }
      break;
    }
    case TrajectoryKind::kLine: {
      // Non-uniform steps: uniform spacing would mask the collinear scale
      // degeneracy behind the similarity alignment.
      std::vector<double> steps(n - 1);
      double total = 0.0;
      for (double& s : steps) {
        s = 0.35 + 1.3 * rng.Uniform();
        total += s;
      }
      double x = 0.0;
      traj.positions.emplace_back(0.0, 0.0, 0.0);
      traj.headings.emplace_back(1.0, 0.0, 0.0);
      for (int u = 1; u < n; ++u) {
        x += steps[u - 1] * cfg.extent / total;
        traj.positions.emplace_back(x, 0.0, 0.0);
        traj.headings.emplace_back(1.0, 0.0, 0.0);
      }
      break;
    }
    case TrajectoryKind::kRandomWalk: {
      const double step = cfg.extent / (n - 1);
      double yaw = 0.0;
      Eigen::Vector3d pos(0.0, 0.0, 0.0);
      for (int u = 0; u < n; ++u) {
        traj.positions.push_back(pos);
        traj.headings.emplace_back(std::cos(yaw), std::sin(yaw), 0.0);
        pos += step * traj.headings.back();
        yaw += rng.Normal(0.25);
      }
      break;
    }
  }
  return traj;
}

void DefaultPointRegion(const SceneConfig& cfg, const Trajectory& traj,
                        Eigen::Vector3d& lo, Eigen::Vector3d& hi) {
  lo = cfg.point_region_min;
  hi = cfg.point_region_max;
  if ((hi - lo).norm() > 0.0) return;
  switch (cfg.trajectory) {
    case TrajectoryKind::kLoop: {
      const double radius = cfg.extent / (2.0 * EIGEN_PI);
      lo = {-1.6 * radius, -1.6 * radius, -0.4 * radius};
      hi = {1.6 * radius, 1.6 * radius, 0.4 * radius};
      break;
    }
    case TrajectoryKind::kLine: {
      // Extends past the far end so the last units keep forward coverage.
      const double len = cfg.extent;
      lo = {-0.02 * len, -0.25 * len, -0.15 * len};
      hi = {1.5 * len, 0.25 * len, 0.15 * len};
      break;
    }
    case TrajectoryKind::kRandomWalk: {
      Eigen::Vector3d min_p = traj.positions.front();
      Eigen::Vector3d max_p = traj.positions.front();
      for (const auto& p : traj.positions) {
        min_p = min_p.cwiseMin(p);
        max_p = max_p.cwiseMax(p);
      }
      const double pad = 0.3 * cfg.extent;
      lo = min_p - Eigen::Vector3d(pad, pad, 0.15 * cfg.extent);
      hi = max_p + Eigen::Vector3d(pad, pad, 0.15 * cfg.extent);
      break;
    }
  }
}

}  // namespace

SyntheticScene GenerateScene(const SceneConfig& cfg) {
  CheckConfig(cfg);
  Rng rng(cfg.seed);
  const int num_slots = static_cast<int>(cfg.slots.size());

  // Rig gauge: express every slot relative to slot 0 so the reference slot
  // is exactly (I, 0).
  RigCalibration rig;
  rig.reference_slot = 0;
  const Rotation r0 = cfg.slots[0].rotation;
  const Eigen::Vector3d t0 = cfg.slots[0].translation;
  for (int s = 0; s < num_slots; ++s) {
    const Rotation rs = cfg.slots[s].rotation * r0.Inverse();
    rig.rotation[s] = rs;
    rig.translation[s] = cfg.slots[s].translation - rs * t0;
  }
  rig.rotation[0] = Rotation::Identity();
  rig.translation[0] = Eigen::Vector3d::Zero();

  const Trajectory traj = MakeTrajectory(cfg, rng);

  // Unit poses in the raw trajectory frame, then re-gauged so the anchor
  // unit (id 0) sits at (I, 0).
  std::vector<Rotation> unit_rot(cfg.num_units);
  std::vector<Eigen::Vector3d> unit_pos(cfg.num_units);
  for (int u = 0; u < cfg.num_units; ++u) {
    const Rotation heading = HeadingRotation(traj.headings[u]);
    unit_rot[u] = r0 * heading;
    unit_pos[u] = traj.positions[u] - heading.Inverse() * (r0.Inverse() * t0);
  }
  const Rotation gauge_rot = unit_rot[0];
  const Eigen::Vector3d gauge_pos = unit_pos[0];
  for (int u = 0; u < cfg.num_units; ++u) {
    unit_rot[u] = unit_rot[u] * gauge_rot.Inverse();
    unit_pos[u] = gauge_rot * (unit_pos[u] - gauge_pos);
  }
  unit_rot[0] = Rotation::Identity();
  unit_pos[0] = Eigen::Vector3d::Zero();

  SyntheticScene scene;
  scene.truth.anchor_unit = 0;
  scene.truth.rig = rig;
  for (int u = 0; u < cfg.num_units; ++u) {
    scene.truth.unit_rotation[u] = unit_rot[u];
    scene.truth.unit_position[u] = unit_pos[u];
  }

  Intrinsics intr;
  intr.focal = 600.0;
  intr.principal_point = {400.0, 300.0};
  intr.image_size = {800.0, 600.0};
  scene.truth.intrinsics[0] = intr;
  scene.graph.intrinsics[0] = intr;

  const auto image_id = [num_slots](int u, int s) {
    return static_cast<ImageId>(u) * num_slots + s;
  };
  for (int u = 0; u < cfg.num_units; ++u) {
    for (int s = 0; s < num_slots; ++s) {
      scene.graph.images.push_back({image_id(u, s), u, s, 0});
    }
  }

  // Per-image camera poses from the final truth.
  std::vector<Rotation> cam_rot(scene.graph.images.size());
  std::vector<Eigen::Vector3d> cam_pos(scene.graph.images.size());
  for (size_t k = 0; k < scene.graph.images.size(); ++k) {
    cam_rot[k] = scene.truth.CameraRotation(scene.graph.images[k]);
    cam_pos[k] = scene.truth.CameraCenter(scene.graph.images[k]);
  }

  // Relative-pose edges. Consecutive units are linked across every slot
  // pair; units two apart per slot; optional intra-unit and loop edges.
  std::vector<std::pair<ImageId, ImageId>> pairs;
  for (int u = 0; u + 1 < cfg.num_units; ++u) {
    for (int sa = 0; sa < num_slots; ++sa) {
      for (int sb = 0; sb < num_slots; ++sb) {
        pairs.emplace_back(image_id(u, sa), image_id(u + 1, sb));
      }
    }
  }
  for (int u = 0; u + 2 < cfg.num_units; ++u) {
    for (int s = 0; s < num_slots; ++s) {
      pairs.emplace_back(image_id(u, s), image_id(u + 2, s));
    }
  }
  if (cfg.intra_unit_edges) {
    for (int u = 0; u < cfg.num_units; ++u) {
      for (int sa = 0; sa < num_slots; ++sa) {
        for (int sb = sa + 1; sb < num_slots; ++sb) {
          pairs.emplace_back(image_id(u, sa), image_id(u, sb));
        }
      }
    }
  }
  if (cfg.loop_closures) {
    const double near = 2.0 * cfg.extent / cfg.num_units;
    const int min_gap = std::max(5, cfg.num_units / 4);
    for (int u = 0; u < cfg.num_units; ++u) {
      for (int v = u + min_gap; v < cfg.num_units; ++v) {
        if ((unit_pos[u] - unit_pos[v]).norm() < near) {
          for (int s = 0; s < num_slots; ++s) {
            pairs.emplace_back(image_id(u, s), image_id(v, s));
          }
        }
      }
    }
  }

  const double sigma_rad = cfg.rotation_noise_sigma_deg * kDegToRad;
  for (const auto& [i, j] : pairs) {
    const Eigen::Vector3d diff = cam_pos[i] - cam_pos[j];
    if (diff.norm() < 1e-9) continue;  // coincident centers, no direction
    RelativePoseEdge edge;
    edge.i = i;
    edge.j = j;
    edge.num_inliers = rng.Integer(50, 500);
    if (rng.Uniform() < cfg.edge_outlier_fraction) {
      edge.rotation_ij = rng.UniformRotation();
      edge.translation_ij = rng.UnitVector();
    } else {
      edge.rotation_ij =
          rng.SmallRotation(sigma_rad) * (cam_rot[j] * cam_rot[i].Inverse());
      edge.translation_ij =
          rng.SmallRotation(sigma_rad) * (cam_rot[j] * diff.normalized());
    }
    scene.graph.edges.push_back(edge);
  }

  // Points and bearing tracks.
  Eigen::Vector3d region_lo, region_hi;
  DefaultPointRegion(cfg, traj, region_lo, region_hi);
  // The sampling region is defined in the raw trajectory frame; map samples
  // into the anchored frame along with everything else.
  const double max_depth = 0.5 * cfg.extent;
  PointId next_point = 0;
  for (int k = 0; k < cfg.num_points; ++k) {
    Eigen::Vector3d raw;
    for (int c = 0; c < 3; ++c) raw(c) = rng.Uniform(region_lo(c), region_hi(c));
    const Eigen::Vector3d p = gauge_rot * (raw - gauge_pos);

    std::vector<size_t> visible;
    for (size_t idx = 0; idx < scene.graph.images.size(); ++idx) {
      const Eigen::Vector3d q = cam_rot[idx] * (p - cam_pos[idx]);
      if (q.z() < kMinDepth || q.z() > max_depth) continue;
      const Eigen::Vector2d px = intr.Project(q);
      if (px.x() < 0.0 || px.x() > intr.image_size.x() || px.y() < 0.0 ||
          px.y() > intr.image_size.y()) {
        continue;
      }
      visible.push_back(idx);
    }
    if (visible.size() > kMaxTrackObservations) {
      std::vector<size_t> kept;
      kept.push_back(visible.front());
      const double stride = static_cast<double>(visible.size() - 1) /
                            (kMaxTrackObservations - 1);
      for (int m = 1; m + 1 < kMaxTrackObservations; ++m) {
        kept.push_back(visible[static_cast<size_t>(std::lround(m * stride))]);
      }
      kept.push_back(visible.back());
      kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
      visible = std::move(kept);
    }

    std::set<UnitId> units_seen;
    for (size_t idx : visible) units_seen.insert(scene.graph.images[idx].unit_id);
    if (visible.size() < 2 || units_seen.size() < 2) continue;

    Track track;
    track.point_id = next_point;
    for (size_t idx : visible) {
      Eigen::Vector3d bearing;
      if (rng.Uniform() < cfg.bearing_outlier_fraction) {
        bearing = rng.UnitVector();
        bearing.z() = std::abs(bearing.z());
        bearing.normalize();
      } else {
        const Eigen::Vector3d q = cam_rot[idx] * (p - cam_pos[idx]);
        Eigen::Vector2d px = intr.Project(q);
        if (cfg.pixel_noise_sigma > 0.0) {
          px += rng.NormalVector2(cfg.pixel_noise_sigma);
        }
        bearing = intr.BackProject(px).normalized();
      }
      TrackObservation obs;
      obs.image_id = scene.graph.images[idx].image_id;
      obs.bearing = bearing;
      track.observations.push_back(obs);
    }
    scene.graph.tracks.push_back(std::move(track));
    scene.truth.points[next_point] = p;
    ++next_point;
  }

  std::set<UnitId> covered;
  for (const Track& track : scene.graph.tracks) {
    for (const TrackObservation& obs : track.observations) {
      covered.insert(scene.graph.FindImage(obs.image_id)->unit_id);
    }
  }
  if (cfg.num_points > 0 && covered.size() < 2) {
    throw std::invalid_argument(
        "scene: configuration yields fewer than 2 co-visible units");
  }
  return scene;
}

SceneConfig ParseSceneConfigJson(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    throw std::runtime_error(std::string("scene config JSON: ") + err.what());
  }
  if (!doc.is_object()) {
    throw std::runtime_error("scene config JSON: top level must be an object");
  }
  SceneConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "num_units") {
      cfg.num_units = value.get<int>();
    } else if (key == "slots") {
      cfg.slots.clear();
      for (const auto& slot : value) {
        SlotSpec spec;
        if (slot.contains("q")) {
          const auto& q = slot["q"];
          spec.rotation = Rotation::FromQuaternion(Eigen::Quaterniond(
              q.at(0).get<double>(), q.at(1).get<double>(),
              q.at(2).get<double>(), q.at(3).get<double>()));
        }
        if (slot.contains("t")) {
          const auto& t = slot["t"];
          spec.translation = {t.at(0).get<double>(), t.at(1).get<double>(),
                              t.at(2).get<double>()};
        }
        cfg.slots.push_back(spec);
      }
    } else if (key == "trajectory") {
      const std::string name = value.get<std::string>();
      if (name == "loop") {
        cfg.trajectory = TrajectoryKind::kLoop;
      } else if (name == "line") {
        cfg.trajectory = TrajectoryKind::kLine;
      } else if (name == "random_walk") {
        cfg.trajectory = TrajectoryKind::kRandomWalk;
      } else {
        throw std::runtime_error("scene config JSON: unknown trajectory '" +
                                 name + "'");
      }
    } else if (key == "extent") {
      cfg.extent = value.get<double>();
    } else if (key == "num_points") {
      cfg.num_points = value.get<int>();
    } else if (key == "point_region") {
      const auto& lo = value.at("min");
      const auto& hi = value.at("max");
      cfg.point_region_min = {lo.at(0).get<double>(), lo.at(1).get<double>(),
                              lo.at(2).get<double>()};
      cfg.point_region_max = {hi.at(0).get<double>(), hi.at(1).get<double>(),
                              hi.at(2).get<double>()};
    } else if (key == "pixel_noise_sigma") {
      cfg.pixel_noise_sigma = value.get<double>();
    } else if (key == "rotation_noise_sigma_deg") {
      cfg.rotation_noise_sigma_deg = value.get<double>();
    } else if (key == "edge_outlier_fraction") {
      cfg.edge_outlier_fraction = value.get<double>();
    } else if (key == "bearing_outlier_fraction") {
      cfg.bearing_outlier_fraction = value.get<double>();
    } else if (key == "intra_unit_edges") {
      cfg.intra_unit_edges = value.get<bool>();
    } else if (key == "loop_closures") {
      cfg.loop_closures = value.get<bool>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw std::runtime_error("scene config JSON: unknown key '" + key + "'");
    }
  }
  return cfg;
}

}  // namespace rigsfm
