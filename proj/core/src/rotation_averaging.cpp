#include "rigsfm/rotation_averaging.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace rigsfm {
namespace {

constexpr double kDegToRad = EIGEN_PI / 180.0;

struct AggregatedEdge {
  std::int64_t a = 0;
  std::int64_t b = 0;
  std::int64_t weight = 0;   // summed over parallel measurements
  size_t representative = 0;  // highest-weight measurement for propagation
};

// Kruskal on the aggregated pair graph; tie-break (weight desc, pair asc)
// matches the scene-level spanning-tree contract. With allow_forest the
// result spans each component instead of throwing on disconnection.
std::vector<AggregatedEdge> SpanningTree(
    const std::vector<std::int64_t>& nodes,
    const std::vector<RelativeRotation>& measurements,
    bool allow_forest = false) {
  std::map<std::pair<std::int64_t, std::int64_t>, AggregatedEdge> pairs;
  for (size_t m = 0; m < measurements.size(); ++m) {
    const auto& meas = measurements[m];
    const auto key = std::minmax(meas.a, meas.b);
    auto [it, inserted] = pairs.emplace(
        key, AggregatedEdge{key.first, key.second, meas.weight, m});
    if (!inserted) {
      it->second.weight += meas.weight;
      if (meas.weight > measurements[it->second.representative].weight) {
        it->second.representative = m;
      }
    }
  }
  std::vector<AggregatedEdge> edges;
  edges.reserve(pairs.size());
  for (const auto& [key, edge] : pairs) edges.push_back(edge);
  std::stable_sort(edges.begin(), edges.end(),
                   [](const AggregatedEdge& x, const AggregatedEdge& y) {
                     if (x.weight != y.weight) return x.weight > y.weight;
                     return std::tie(x.a, x.b) < std::tie(y.a, y.b);
                   });

  std::map<std::int64_t, std::int64_t> parent;
  for (std::int64_t id : nodes) parent[id] = id;
  const auto find = [&parent](std::int64_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  std::vector<AggregatedEdge> tree;
  for (const AggregatedEdge& edge : edges) {
    const std::int64_t ra = find(edge.a);
    const std::int64_t rb = find(edge.b);
    if (ra == rb) continue;
    parent[rb] = ra;
    tree.push_back(edge);
  }
  if (tree.size() + 1 != nodes.size() && !allow_forest) {
    std::map<std::int64_t, std::vector<std::int64_t>> components;
    for (std::int64_t id : nodes) components[find(id)].push_back(id);
    std::ostringstream msg;
    msg << "rotation averaging: measurement graph is disconnected; components:";
    for (const auto& [root, members] : components) {
      msg << " {" << members.front() << "..." << members.back() << " ("
          << members.size() << ")}";
    }
    throw std::runtime_error(msg.str());
  }
  return tree;
}

}  // namespace

std::map<std::int64_t, Rotation> AverageRotationMeasurements(
    const std::vector<std::int64_t>& nodes,
    const std::vector<RelativeRotation>& measurements, std::int64_t anchor,
    const RotationAveragingOptions& options, RotationSolveSummary* summary) {
  if (nodes.empty()) {
    throw std::invalid_argument("rotation averaging: empty node set");
  }
  if (std::find(nodes.begin(), nodes.end(), anchor) == nodes.end()) {
    throw std::invalid_argument("rotation averaging: anchor not among nodes");
  }

  std::map<std::int64_t, Rotation> rotations;
  for (std::int64_t id : nodes) rotations[id] = Rotation::Identity();
  if (summary) *summary = RotationSolveSummary{};
  if (nodes.size() == 1) return rotations;

  const auto residual_sum = [&]() {
    double sum = 0.0;
    for (const RelativeRotation& meas : measurements) {
      sum += GeodesicDistance(meas.rotation_ab,
                              rotations.at(meas.b) * rotations.at(meas.a).Inverse());
    }
    return sum;
  };

  // Initialization: propagate R_b = R_ab * R_a outward from the anchor
  // along the maximum spanning tree.
  {
    const std::vector<AggregatedEdge> tree = SpanningTree(nodes, measurements);
    std::multimap<std::int64_t, const AggregatedEdge*> adjacency;
    for (const AggregatedEdge& edge : tree) {
      adjacency.emplace(edge.a, &edge);
      adjacency.emplace(edge.b, &edge);
    }
    std::set<std::int64_t> done{anchor};
    std::vector<std::int64_t> frontier{anchor};
    while (!frontier.empty()) {
      const std::int64_t current = frontier.back();
      frontier.pop_back();
      auto [lo, hi] = adjacency.equal_range(current);
      for (auto it = lo; it != hi; ++it) {
        const RelativeRotation& meas = measurements[it->second->representative];
        const std::int64_t next = meas.a == current ? meas.b : meas.a;
        if (done.count(next)) continue;
        done.insert(next);
        if (meas.a == current) {
          rotations[next] = meas.rotation_ab * rotations[current];
        } else {
          rotations[next] = meas.rotation_ab.Inverse() * rotations[current];
        }
        frontier.push_back(next);
      }
    }
  }

  // Tangent index per node, anchor eliminated.
  std::map<std::int64_t, int> index;
  for (std::int64_t id : nodes) {
    if (id != anchor) index.emplace(id, static_cast<int>(index.size()));
  }
  const int n = static_cast<int>(index.size());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  std::vector<Eigen::Vector3d> omegas(measurements.size());

  // Body-frame discrepancy log(R_b^T R_ab R_a): its first-order response to
  // right-multiplicative updates R <- R exp(delta) is omega - (delta_b -
  // delta_a) with no frame-dependent adjoint, so the fixed-point iteration
  // contracts even when the field spans all of SO(3).
  const auto relinearize = [&]() {
    for (size_t m = 0; m < measurements.size(); ++m) {
      const RelativeRotation& meas = measurements[m];
      omegas[m] = Log(rotations[meas.b].Inverse() * meas.rotation_ab *
                      rotations[meas.a]);
    }
  };

  // Weighted least-squares step for the linearized residuals
  // omega_m - (delta_b - delta_a); the three tangent coordinates decouple
  // into one graph Laplacian shared across components.
  const auto solve_weighted = [&](const std::vector<double>& weights) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
    for (size_t m = 0; m < measurements.size(); ++m) {
      const RelativeRotation& meas = measurements[m];
      const double w = weights[m];
      const int ia = meas.a == anchor ? -1 : index.at(meas.a);
      const int ib = meas.b == anchor ? -1 : index.at(meas.b);
      if (ib >= 0) {
        triplets.emplace_back(ib, ib, w);
        rhs.row(ib) += w * omegas[m].transpose();
      }
      if (ia >= 0) {
        triplets.emplace_back(ia, ia, w);
        rhs.row(ia) -= w * omegas[m].transpose();
      }
      if (ia >= 0 && ib >= 0) {
        triplets.emplace_back(ia, ib, -w);
        triplets.emplace_back(ib, ia, -w);
      }
    }
    for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, 1e-10);

    Eigen::SparseMatrix<double> laplacian(n, n);
    laplacian.setFromTriplets(triplets.begin(), triplets.end());
    if (!analyzed) {
      ldlt.analyzePattern(laplacian);
      analyzed = true;
    }
    ldlt.factorize(laplacian);
    if (ldlt.info() != Eigen::Success) {
      throw std::runtime_error("rotation averaging: Laplacian factorization failed");
    }
    return Eigen::MatrixXd(ldlt.solve(rhs));
  };

  const auto retract = [&](const Eigen::MatrixXd& delta) {
    double max_update = 0.0;
    for (const auto& [id, idx] : index) {
      const Eigen::Vector3d step = delta.row(idx).transpose();
      max_update = std::max(max_update, step.norm());
      rotations[id] = rotations[id] * Exp(step);
    }
    return max_update;
  };

  if (summary) summary->initial_residual_rad = residual_sum();

  std::vector<double> weights(measurements.size(), 1.0);

  // L1 phase: lagged IRLS for the least-absolute-deviations subproblem,
  // weights from the relinearized residuals. Exact-fit edges (the spanning
  // tree at the first iteration) get the capped weight and hold the iterate
  // inside the basin the initialization chose, which is the point of the
  // L1 pass.
  int iterations = 0;
  for (int it = 0; it < options.l1_iterations; ++it, ++iterations) {
    relinearize();
    for (size_t m = 0; m < measurements.size(); ++m) {
      weights[m] = 1.0 / std::max(omegas[m].norm(), 1e-5);
    }
    retract(solve_weighted(weights));
  }

  // IRLS phase with Cauchy-style weights on the relinearized residuals.
  const double sigma = options.irls_sigma_deg * kDegToRad;
  const double tol = options.irls_update_tol_deg * kDegToRad;
  bool converged = false;
  for (int it = 0; it < options.irls_max_iterations; ++it) {
    ++iterations;
    relinearize();
    for (size_t m = 0; m < measurements.size(); ++m) {
      const double z = omegas[m].norm() / sigma;
      weights[m] = 1.0 / (1.0 + z * z);
    }
    const double update = retract(solve_weighted(weights));
    if (update < tol) {
      converged = true;
      break;
    }
  }
  if (summary) {
    summary->final_residual_rad = residual_sum();
    summary->iterations = iterations;
    summary->converged = converged;
  }
  return rotations;
}

RotationField AverageRotations(const ViewGraph& graph, ImageId anchor_image,
                               const RotationAveragingOptions& options,
                               RotationSolveSummary* summary) {
  std::vector<std::int64_t> nodes;
  nodes.reserve(graph.images.size());
  for (const ImageNode& node : graph.images) nodes.push_back(node.image_id);
  std::vector<RelativeRotation> measurements;
  measurements.reserve(graph.edges.size());
  for (const RelativePoseEdge& edge : graph.edges) {
    measurements.push_back({edge.i, edge.j, edge.rotation_ij, edge.num_inliers});
  }
  return AverageRotationMeasurements(nodes, measurements, anchor_image, options,
                                     summary);
}

std::map<SlotId, Rotation> EstimateInternalRotations(
    const RotationField& global_rotations, const std::vector<ImageNode>& images) {
  std::set<SlotId> slots;
  std::map<UnitId, std::map<SlotId, ImageId>> units;
  for (const ImageNode& node : images) {
    slots.insert(node.slot_id);
    units[node.unit_id][node.slot_id] = node.image_id;
  }
  if (slots.empty()) {
    throw std::invalid_argument("EstimateInternalRotations: no images");
  }
  const SlotId reference = *slots.begin();

  // Per-unit relative-rotation samples for every co-observed slot pair.
  std::map<std::pair<SlotId, SlotId>, std::vector<Rotation>> samples;
  for (const auto& [unit, slot_images] : units) {
    for (auto it_a = slot_images.begin(); it_a != slot_images.end(); ++it_a) {
      for (auto it_b = std::next(it_a); it_b != slot_images.end(); ++it_b) {
        const Rotation& ra = global_rotations.at(it_a->second);
        const Rotation& rb = global_rotations.at(it_b->second);
        samples[{it_a->first, it_b->first}].push_back(rb * ra.Inverse());
      }
    }
  }

  // Median of the direct estimates against the reference where they exist;
  // other slots chain along the maximum co-occurrence spanning tree.
  const auto pair_median = [&samples](SlotId from, SlotId to) {
    if (from < to) return GeodesicMedian(samples.at({from, to})).median;
    return GeodesicMedian(samples.at({to, from})).median.Inverse();
  };

  std::map<SlotId, Rotation> internal;
  internal[reference] = Rotation::Identity();
  std::vector<SlotId> pending;
  for (SlotId slot : slots) {
    if (slot == reference) continue;
    if (samples.count(std::minmax(slot, reference))) {
      internal[slot] = pair_median(reference, slot);
    } else {
      pending.push_back(slot);
    }
  }

  if (!pending.empty()) {
    // Slot connectivity graph weighted by co-occurrence counts.
    std::vector<std::int64_t> node_ids(slots.begin(), slots.end());
    std::vector<RelativeRotation> co_edges;
    for (const auto& [pair, list] : samples) {
      co_edges.push_back({pair.first, pair.second, Rotation::Identity(),
                          static_cast<std::int64_t>(list.size())});
    }
    std::multimap<SlotId, SlotId> adjacency;
    for (const AggregatedEdge& e : SpanningTree(node_ids, co_edges,
                                                /*allow_forest=*/true)) {
      adjacency.emplace(e.a, e.b);
      adjacency.emplace(e.b, e.a);
    }
    // Compose medians edge-by-edge outward from the reference slot.
    std::map<SlotId, Rotation> chained{{reference, Rotation::Identity()}};
    std::vector<SlotId> frontier{reference};
    while (!frontier.empty()) {
      const SlotId current = frontier.back();
      frontier.pop_back();
      auto [lo, hi] = adjacency.equal_range(current);
      for (auto it = lo; it != hi; ++it) {
        if (chained.count(it->second)) continue;
        chained[it->second] = pair_median(current, it->second) * chained[current];
        frontier.push_back(it->second);
      }
    }
    for (SlotId slot : pending) {
      const auto it = chained.find(slot);
      if (it == chained.end()) {
        throw std::runtime_error(
            "EstimateInternalRotations: slot " + std::to_string(slot) +
            " is unreachable from the reference slot via shared units");
      }
      internal[slot] = it->second;
    }
  }
  return internal;
}

UnitRotationField AverageUnitRotations(
    const ViewGraph& graph, const std::map<SlotId, Rotation>& rig_rotations,
    UnitId anchor_unit, const RotationAveragingOptions& options,
    RotationSolveSummary* summary) {
  std::unordered_map<ImageId, const ImageNode*> by_id;
  std::set<UnitId> unit_set;
  for (const ImageNode& node : graph.images) {
    by_id.emplace(node.image_id, &node);
    unit_set.insert(node.unit_id);
  }

  std::vector<RelativeRotation> measurements;
  measurements.reserve(graph.edges.size());
  for (const RelativePoseEdge& edge : graph.edges) {
    const ImageNode& ni = *by_id.at(edge.i);
    const ImageNode& nj = *by_id.at(edge.j);
    if (ni.unit_id == nj.unit_id) continue;  // no unit-to-unit information
    // R_uv = R_slot(j)^T * R_ij * R_slot(i)
    const Rotation r_uv = rig_rotations.at(nj.slot_id).Inverse() *
                          edge.rotation_ij * rig_rotations.at(ni.slot_id);
    measurements.push_back({ni.unit_id, nj.unit_id, r_uv, edge.num_inliers});
  }

  const std::vector<std::int64_t> nodes(unit_set.begin(), unit_set.end());
  return AverageRotationMeasurements(nodes, measurements, anchor_unit, options,
                                     summary);
}

RotationField ComposeCameraRotations(
    const std::map<SlotId, Rotation>& rig_rotations,
    const UnitRotationField& unit_rotations,
    const std::vector<ImageNode>& images) {
  RotationField out;
  for (const ImageNode& node : images) {
    const auto rig = rig_rotations.find(node.slot_id);
    if (rig == rig_rotations.end()) {
      throw std::invalid_argument("ComposeCameraRotations: missing slot " +
                                  std::to_string(node.slot_id));
    }
    const auto unit = unit_rotations.find(node.unit_id);
    if (unit == unit_rotations.end()) {
      throw std::invalid_argument("ComposeCameraRotations: missing unit " +
                                  std::to_string(node.unit_id));
    }
    out[node.image_id] = rig->second * unit->second;
  }
  return out;
}

}  // namespace rigsfm
