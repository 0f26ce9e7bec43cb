#pragma once

#include "rigsfm/rng.hpp"
#include "rigsfm/scene.hpp"
#include "rigsfm/so3.hpp"

#include <vector>

namespace rigsfm::testing {

inline constexpr double kDeg = EIGEN_PI / 180.0;

/// Exhaustive minimizer of sum_i d(X, R_i) over a tangent-space grid around
/// `center`: candidates are Exp(v) * center for v on a cubic lattice of
/// half-width `radius_rad` and spacing `step_rad`. Independent of the
/// Weiszfeld implementation path.
inline Rotation GridGeodesicMedian(const std::vector<Rotation>& samples,
                                   const Rotation& center, double radius_rad,
                                   double step_rad) {
  Rotation best = center;
  double best_obj = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(radius_rad / step_rad);
  for (int ix = -n; ix <= n; ++ix) {
    for (int iy = -n; iy <= n; ++iy) {
      for (int iz = -n; iz <= n; ++iz) {
        const Eigen::Vector3d v(ix * step_rad, iy * step_rad, iz * step_rad);
        const Rotation candidate = Exp(v) * center;
        double obj = 0.0;
        for (const Rotation& s : samples) obj += GeodesicDistance(candidate, s);
        if (obj < best_obj) {
          best_obj = obj;
          best = candidate;
        }
      }
    }
  }
  return best;
}

/// Minimal well-formed two-unit graph used by the scene-model tests.
inline ViewGraph TinyGraph() {
  ViewGraph graph;
  Intrinsics intr;
  intr.focal = 500.0;
  intr.principal_point = {320.0, 240.0};
  intr.image_size = {640.0, 480.0};
  graph.intrinsics[0] = intr;
  graph.images = {{0, 0, 0, 0}, {1, 0, 1, 0}, {2, 1, 0, 0}, {3, 1, 1, 0}};
  RelativePoseEdge edge;
  edge.i = 0;
  edge.j = 2;
  edge.rotation_ij = Exp({0.0, 0.1, 0.0});
  edge.translation_ij = Eigen::Vector3d(1.0, 0.0, 0.0);
  edge.num_inliers = 100;
  graph.edges.push_back(edge);
  edge.i = 1;
  edge.j = 3;
  edge.num_inliers = 120;
  graph.edges.push_back(edge);
  Track track;
  track.point_id = 0;
  TrackObservation obs;
  obs.image_id = 0;
  obs.bearing = Eigen::Vector3d(0.0, 0.0, 1.0);
  track.observations.push_back(obs);
  obs.image_id = 2;
  track.observations.push_back(obs);
  graph.tracks.push_back(track);
  return graph;
}

}  // namespace rigsfm::testing
