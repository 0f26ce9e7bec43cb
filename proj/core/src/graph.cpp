#include "rigsfm/graph.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace rigsfm {
namespace {

class UnionFind {
 public:
  explicit UnionFind(size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), size_t{0});
  }
  size_t Find(size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool Union(size_t a, size_t b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<size_t> parent_;
};

std::unordered_map<ImageId, size_t> IndexImages(const ViewGraph& graph) {
  std::unordered_map<ImageId, size_t> index;
  index.reserve(graph.images.size());
  for (size_t k = 0; k < graph.images.size(); ++k) {
    index.emplace(graph.images[k].image_id, k);
  }
  return index;
}

// Generic maximum-weight Kruskal over (a, b, weight) triples. `describe`
// renders a node id for the disconnected-graph error message.
template <typename Edge, typename NodeId>
std::vector<Edge> MaxSpanningTree(const std::vector<NodeId>& nodes,
                                  std::vector<Edge> edges,
                                  const char* what) {
  std::map<NodeId, size_t> index;
  for (const NodeId& id : nodes) index.emplace(id, index.size());

  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.weight != y.weight) return x.weight > y.weight;
    const auto px = std::minmax(x.a, x.b);
    const auto py = std::minmax(y.a, y.b);
    return px < py;
  });

  UnionFind uf(nodes.size());
  std::vector<Edge> tree;
  tree.reserve(nodes.size() > 0 ? nodes.size() - 1 : 0);
  for (const Edge& e : edges) {
    if (uf.Union(index.at(e.a), index.at(e.b))) {
      tree.push_back(e);
    }
  }
  if (nodes.size() > 0 && tree.size() + 1 != nodes.size()) {
    std::map<size_t, std::vector<NodeId>> components;
    for (const NodeId& id : nodes) {
      components[uf.Find(index.at(id))].push_back(id);
    }
    std::ostringstream msg;
    msg << what << ": graph is disconnected; components:";
    for (const auto& [root, members] : components) {
      msg << " {" << members.front() << "..." << members.back() << " ("
          << members.size() << ")}";
    }
    throw std::runtime_error(msg.str());
  }
  return tree;
}

}  // namespace

ViewGraph LargestConnectedComponent(const ViewGraph& graph) {
  if (graph.images.empty()) {
    throw std::invalid_argument("LargestConnectedComponent: empty graph");
  }
  const auto index = IndexImages(graph);
  UnionFind uf(graph.images.size());

  // Images of the same unit are implicitly connected.
  std::unordered_map<UnitId, size_t> unit_rep;
  for (size_t k = 0; k < graph.images.size(); ++k) {
    auto [it, inserted] = unit_rep.emplace(graph.images[k].unit_id, k);
    if (!inserted) uf.Union(it->second, k);
  }
  for (const RelativePoseEdge& edge : graph.edges) {
    uf.Union(index.at(edge.i), index.at(edge.j));
  }

  // Pick the component with the most units; ties to the smallest unit id.
  std::map<size_t, std::set<UnitId>> component_units;
  for (size_t k = 0; k < graph.images.size(); ++k) {
    component_units[uf.Find(k)].insert(graph.images[k].unit_id);
  }
  size_t best_root = component_units.begin()->first;
  for (const auto& [root, units] : component_units) {
    const auto& best = component_units.at(best_root);
    if (units.size() > best.size() ||
        (units.size() == best.size() && *units.begin() < *best.begin())) {
      best_root = root;
    }
  }

  ViewGraph out;
  std::unordered_map<ImageId, bool> keep;
  for (size_t k = 0; k < graph.images.size(); ++k) {
    const bool in = uf.Find(k) == best_root;
    keep[graph.images[k].image_id] = in;
    if (in) out.images.push_back(graph.images[k]);
  }
  for (const ImageNode& node : out.images) {
    out.intrinsics[node.intrinsics_id] = graph.intrinsics.at(node.intrinsics_id);
  }
  for (const RelativePoseEdge& edge : graph.edges) {
    if (keep.at(edge.i) && keep.at(edge.j)) out.edges.push_back(edge);
  }
  for (const Track& track : graph.tracks) {
    Track filtered;
    filtered.point_id = track.point_id;
    for (const TrackObservation& obs : track.observations) {
      auto it = keep.find(obs.image_id);
      if (it != keep.end() && it->second) filtered.observations.push_back(obs);
    }
    if (filtered.observations.size() >= 2) {
      out.tracks.push_back(std::move(filtered));
    }
  }
  return out;
}

std::vector<RelativePoseEdge> MaximumSpanningTreeImages(const ViewGraph& graph) {
  struct E {
    ImageId a, b;
    std::int64_t weight;
    const RelativePoseEdge* edge;
  };
  std::vector<ImageId> nodes;
  nodes.reserve(graph.images.size());
  for (const ImageNode& node : graph.images) nodes.push_back(node.image_id);
  std::vector<E> edges;
  edges.reserve(graph.edges.size());
  for (const RelativePoseEdge& edge : graph.edges) {
    edges.push_back({edge.i, edge.j, edge.num_inliers, &edge});
  }
  std::vector<RelativePoseEdge> tree;
  for (const E& e : MaxSpanningTree(nodes, std::move(edges),
                                    "MaximumSpanningTreeImages")) {
    tree.push_back(*e.edge);
  }
  return tree;
}

std::vector<UnitEdge> UnitQuotientGraph(const ViewGraph& graph) {
  const auto index = IndexImages(graph);
  std::map<std::pair<UnitId, UnitId>, std::int64_t> weights;
  for (const RelativePoseEdge& edge : graph.edges) {
    const UnitId ua = graph.images[index.at(edge.i)].unit_id;
    const UnitId ub = graph.images[index.at(edge.j)].unit_id;
    if (ua == ub) continue;  // intra-unit edges carry no unit-level information
    weights[std::minmax(ua, ub)] += edge.num_inliers;
  }
  std::vector<UnitEdge> out;
  out.reserve(weights.size());
  for (const auto& [pair, weight] : weights) {
    out.push_back({pair.first, pair.second, weight});
  }
  return out;
}

std::vector<UnitEdge> MaximumSpanningTreeUnits(const ViewGraph& graph) {
  std::set<UnitId> unit_set;
  for (const ImageNode& node : graph.images) unit_set.insert(node.unit_id);
  const std::vector<UnitId> nodes(unit_set.begin(), unit_set.end());
  return MaxSpanningTree(nodes, UnitQuotientGraph(graph),
                         "MaximumSpanningTreeUnits");
}

}  // namespace rigsfm
