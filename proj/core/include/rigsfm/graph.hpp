#pragma once

#include "rigsfm/scene.hpp"

namespace rigsfm {

/// Subgraph induced by the largest connected component, where images of one
/// rigid unit count as implicitly connected (connectivity lives on the
/// unit-level quotient). Component size is measured in units; ties go to the
/// component containing the smallest unit id. Tracks are restricted to the
/// surviving images and dropped below 2 observations.
/// Throws std::invalid_argument on an empty graph. Idempotent.
ViewGraph LargestConnectedComponent(const ViewGraph& graph);

/// Spanning tree of the image graph maximizing total num_inliers.
/// Deterministic tie-break: higher inliers first, then the lexicographically
/// smaller (min id, max id) pair. Throws std::runtime_error naming the
/// components if the image graph is not edge-connected.
std::vector<RelativePoseEdge> MaximumSpanningTreeImages(const ViewGraph& graph);

/// One edge of the unit-level quotient graph; weight is the summed inlier
/// count over all image edges between the two units.
struct UnitEdge {
  UnitId a = 0;
  UnitId b = 0;
  std::int64_t weight = 0;
};

/// Unit-level quotient of the view graph. Intra-unit edges are excluded.
std::vector<UnitEdge> UnitQuotientGraph(const ViewGraph& graph);

/// Maximum spanning tree of the unit quotient graph, same contract as the
/// image-level variant.
std::vector<UnitEdge> MaximumSpanningTreeUnits(const ViewGraph& graph);

}  // namespace rigsfm
