#include "rigsfm/translation_averaging.hpp"

#include "rigsfm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace rigsfm {
namespace {

constexpr double kDegenerateBaseline = 1e-9;

struct ImageInfo {
  UnitId unit = 0;
  SlotId slot = 0;
  Rotation rotation;          // R_i
  Eigen::Matrix3d rt;         // R_i^T
};

struct Context {
  std::map<ImageId, ImageInfo> images;
  std::vector<UnitId> units;  // sorted
  std::vector<SlotId> slots;  // sorted
  UnitId anchor_unit = 0;
  SlotId reference_slot = 0;
};

Context MakeContext(const ViewGraph& graph, const RotationField& rotations) {
  Context ctx;
  std::set<UnitId> units;
  std::set<SlotId> slots;
  for (const ImageNode& node : graph.images) {
    const auto it = rotations.find(node.image_id);
    if (it == rotations.end()) {
      throw std::invalid_argument("translation averaging: missing rotation for image " +
                                  std::to_string(node.image_id));
    }
    ImageInfo info;
    info.unit = node.unit_id;
    info.slot = node.slot_id;
    info.rotation = it->second;
    info.rt = it->second.Inverse().Matrix();
    ctx.images.emplace(node.image_id, std::move(info));
    units.insert(node.unit_id);
    slots.insert(node.slot_id);
  }
  if (units.empty()) {
    throw std::invalid_argument("translation averaging: empty graph");
  }
  ctx.units.assign(units.begin(), units.end());
  ctx.slots.assign(slots.begin(), slots.end());
  ctx.anchor_unit = ctx.units.front();
  ctx.reference_slot = ctx.slots.front();
  return ctx;
}

// ---------------------------------------------------------------------------
// Residual terms.

// || b - C/||C|| ||, C = c_i - c_j + R_j^T t_j - R_i^T t_i.
// Blocks: [unit_i, unit_j, slot_i, slot_j]. Near-zero baselines contribute a
// zero residual with zero Jacobian for the iteration.
class EdgeAngleTerm final : public CostTerm {
 public:
  EdgeAngleTerm(Eigen::Vector3d b, Eigen::Matrix3d rt_i, Eigen::Matrix3d rt_j)
      : b_(std::move(b)), rt_i_(std::move(rt_i)), rt_j_(std::move(rt_j)) {}

  int ResidualSize() const override { return 3; }

  void Evaluate(const std::vector<const double*>& params,
                Eigen::VectorXd& residual,
                const std::vector<Eigen::MatrixXd*>* jacobians) const override {
    const Eigen::Map<const Eigen::Vector3d> c_i(params[0]), c_j(params[1]),
        t_i(params[2]), t_j(params[3]);
    const Eigen::Vector3d c = c_i - c_j + rt_j_ * t_j - rt_i_ * t_i;
    const double norm = c.norm();
    if (norm < kDegenerateBaseline) {
      residual.setZero();
      if (jacobians) {
        for (auto* j : *jacobians) {
          if (j) j->setZero();
        }
      }
      return;
    }
    const Eigen::Vector3d dir = c / norm;
    residual = b_ - dir;
    if (jacobians) {
      const Eigen::Matrix3d p =
          (Eigen::Matrix3d::Identity() - dir * dir.transpose()) / norm;
      if ((*jacobians)[0]) *(*jacobians)[0] = -p;
      if ((*jacobians)[1]) *(*jacobians)[1] = p;
      if ((*jacobians)[2]) *(*jacobians)[2] = p * rt_i_;
      if ((*jacobians)[3]) *(*jacobians)[3] = -p * rt_j_;
    }
  }

 private:
  Eigen::Vector3d b_;
  Eigen::Matrix3d rt_i_, rt_j_;
};

// || b - d * C ||, the bilinear form with the inverse-length auxiliary d.
// Blocks: [unit_i, unit_j, slot_i, slot_j, d].
class EdgeBilinearTerm final : public CostTerm {
 public:
  EdgeBilinearTerm(Eigen::Vector3d b, Eigen::Matrix3d rt_i, Eigen::Matrix3d rt_j)
      : b_(std::move(b)), rt_i_(std::move(rt_i)), rt_j_(std::move(rt_j)) {}

  int ResidualSize() const override { return 3; }

  void Evaluate(const std::vector<const double*>& params,
                Eigen::VectorXd& residual,
                const std::vector<Eigen::MatrixXd*>* jacobians) const override {
    const Eigen::Map<const Eigen::Vector3d> c_i(params[0]), c_j(params[1]),
        t_i(params[2]), t_j(params[3]);
    const double d = params[4][0];
    const Eigen::Vector3d c = c_i - c_j + rt_j_ * t_j - rt_i_ * t_i;
    residual = b_ - d * c;
    if (jacobians) {
      const Eigen::Matrix3d di = d * Eigen::Matrix3d::Identity();
      if ((*jacobians)[0]) *(*jacobians)[0] = -di;
      if ((*jacobians)[1]) *(*jacobians)[1] = di;
      if ((*jacobians)[2]) *(*jacobians)[2] = d * rt_i_;
      if ((*jacobians)[3]) *(*jacobians)[3] = -d * rt_j_;
      if ((*jacobians)[4]) *(*jacobians)[4] = -c;
    }
  }

 private:
  Eigen::Vector3d b_;
  Eigen::Matrix3d rt_i_, rt_j_;
};

// || w - u/||u|| ||, u = p - c^g + R_i^T t^r. Blocks: [unit, slot, point].
class TrackAngleTerm final : public CostTerm {
 public:
  TrackAngleTerm(Eigen::Vector3d w, Eigen::Matrix3d rt)
      : w_(std::move(w)), rt_(std::move(rt)) {}

  int ResidualSize() const override { return 3; }

  void Evaluate(const std::vector<const double*>& params,
                Eigen::VectorXd& residual,
                const std::vector<Eigen::MatrixXd*>* jacobians) const override {
    const Eigen::Map<const Eigen::Vector3d> c(params[0]), t(params[1]),
        p(params[2]);
    const Eigen::Vector3d u = p - c + rt_ * t;
    const double norm = u.norm();
    if (norm < kDegenerateBaseline) {
      residual.setZero();
      if (jacobians) {
        for (auto* j : *jacobians) {
          if (j) j->setZero();
        }
      }
      return;
    }
    const Eigen::Vector3d dir = u / norm;
    residual = w_ - dir;
    if (jacobians) {
      const Eigen::Matrix3d pm =
          (Eigen::Matrix3d::Identity() - dir * dir.transpose()) / norm;
      if ((*jacobians)[0]) *(*jacobians)[0] = pm;
      if ((*jacobians)[1]) *(*jacobians)[1] = -pm * rt_;
      if ((*jacobians)[2]) *(*jacobians)[2] = -pm;
    }
  }

 private:
  Eigen::Vector3d w_;
  Eigen::Matrix3d rt_;
};

// || w - d * u ||. Blocks: [unit, slot, point, d].
class TrackBilinearTerm final : public CostTerm {
 public:
  TrackBilinearTerm(Eigen::Vector3d w, Eigen::Matrix3d rt)
      : w_(std::move(w)), rt_(std::move(rt)) {}

  int ResidualSize() const override { return 3; }

  void Evaluate(const std::vector<const double*>& params,
                Eigen::VectorXd& residual,
                const std::vector<Eigen::MatrixXd*>* jacobians) const override {
    const Eigen::Map<const Eigen::Vector3d> c(params[0]), t(params[1]),
        p(params[2]);
    const double d = params[3][0];
    const Eigen::Vector3d u = p - c + rt_ * t;
    residual = w_ - d * u;
    if (jacobians) {
      const Eigen::Matrix3d di = d * Eigen::Matrix3d::Identity();
      if ((*jacobians)[0]) *(*jacobians)[0] = di;
      if ((*jacobians)[1]) *(*jacobians)[1] = -d * rt_;
      if ((*jacobians)[2]) *(*jacobians)[2] = -di;
      if ((*jacobians)[3]) *(*jacobians)[3] = -u;
    }
  }

 private:
  Eigen::Vector3d w_;
  Eigen::Matrix3d rt_;
};

// ---------------------------------------------------------------------------

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

void CheckFinite(const PositionField& field, const char* where) {
  for (const auto& [id, v] : field.unit_position) {
    if (!v.allFinite()) {
      throw std::invalid_argument(std::string(where) + ": non-finite position for unit " +
                                  std::to_string(id));
    }
  }
  for (const auto& [id, v] : field.internal_translation) {
    if (!v.allFinite()) {
      throw std::invalid_argument(std::string(where) + ": non-finite translation for slot " +
                                  std::to_string(id));
    }
  }
}

// Adds one position block per unit and per slot, anchor/reference constant.
void AddPositionBlocks(TranslationProblem& tp, const Context& ctx,
                       const PositionField& init) {
  for (UnitId unit : ctx.units) {
    const auto it = init.unit_position.find(unit);
    const Eigen::Vector3d value =
        it != init.unit_position.end() ? it->second : Eigen::Vector3d::Zero();
    tp.unit_block[unit] = tp.problem.AddBlock(std::span(value.data(), 3));
  }
  for (SlotId slot : ctx.slots) {
    const auto it = init.internal_translation.find(slot);
    const Eigen::Vector3d value = it != init.internal_translation.end()
                                      ? it->second
                                      : Eigen::Vector3d::Zero();
    tp.slot_block[slot] = tp.problem.AddBlock(std::span(value.data(), 3));
  }
  tp.problem.SetConstant(tp.unit_block.at(ctx.anchor_unit));
  tp.problem.SetConstant(tp.slot_block.at(ctx.reference_slot));
  tp.anchor_unit = ctx.anchor_unit;
  tp.reference_slot = ctx.reference_slot;
}

PositionField ExtractPositions(const TranslationProblem& tp) {
  PositionField out;
  const Eigen::Map<const Eigen::Vector3d> anchor(
      tp.problem.BlockValues(tp.unit_block.at(tp.anchor_unit)));
  const Eigen::Vector3d shift = anchor;
  for (const auto& [unit, block] : tp.unit_block) {
    const Eigen::Map<const Eigen::Vector3d> v(tp.problem.BlockValues(block));
    out.unit_position[unit] = v - shift;
  }
  out.unit_position[tp.anchor_unit] = Eigen::Vector3d::Zero();
  for (const auto& [slot, block] : tp.slot_block) {
    const Eigen::Map<const Eigen::Vector3d> v(tp.problem.BlockValues(block));
    out.internal_translation[slot] = v;
  }
  out.internal_translation[tp.reference_slot] = Eigen::Vector3d::Zero();
  return out;
}

PointField ExtractPoints(const TranslationProblem& tp) {
  PointField out;
  const Eigen::Map<const Eigen::Vector3d> anchor(
      tp.problem.BlockValues(tp.unit_block.at(tp.anchor_unit)));
  const Eigen::Vector3d shift = anchor;
  for (const auto& [point, block] : tp.point_block) {
    const Eigen::Map<const Eigen::Vector3d> v(tp.problem.BlockValues(block));
    out[point] = v - shift;
  }
  return out;
}

// Projection for the bilinear auxiliaries: d >= 0 after each accepted step.
std::function<void(LeastSquaresProblem&)> ClampAuxNonnegative(
    std::vector<int> aux_blocks) {
  return [aux = std::move(aux_blocks)](LeastSquaresProblem& problem) {
    for (int block : aux) {
      double* value = problem.BlockValues(block);
      if (value[0] < 0.0) value[0] = 0.0;
    }
  };
}

void RunParallel(int num_items, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || num_items <= 1) {
    for (int i = 0; i < num_items; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(threads, num_items);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < num_items; i = next.fetch_add(1)) {
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

ViewGraph FilterEdgesByRotationConsistency(const ViewGraph& graph,
                                           const RotationField& rotations,
                                           double max_error_deg,
                                           int* dropped) {
  if (dropped) *dropped = 0;
  if (max_error_deg <= 0.0) return graph;
  const double max_rad = max_error_deg * EIGEN_PI / 180.0;
  ViewGraph filtered = graph;
  filtered.edges.clear();
  for (const RelativePoseEdge& edge : graph.edges) {
    const Rotation expected =
        rotations.at(edge.j) * rotations.at(edge.i).Inverse();
    if (GeodesicDistance(edge.rotation_ij, expected) <= max_rad) {
      filtered.edges.push_back(edge);
    } else if (dropped) {
      ++*dropped;
    }
  }
  return filtered;
}

std::vector<TrackView> BuildTrackViews(const ViewGraph& graph,
                                       const RotationField& rotations,
                                       const TranslationOptions& options,
                                       int* dropped_short) {
  const Context ctx = MakeContext(graph, rotations);
  std::unordered_map<ImageId, const ImageNode*> nodes;
  for (const ImageNode& node : graph.images) nodes.emplace(node.image_id, &node);

  std::vector<TrackView> views;
  int dropped = 0;
  for (const Track& track : graph.tracks) {
    TrackView view;
    view.point_id = track.point_id;
    for (const TrackObservation& obs : track.observations) {
      const auto node_it = nodes.find(obs.image_id);
      if (node_it == nodes.end()) continue;
      const ImageInfo& info = ctx.images.at(obs.image_id);
      const Eigen::Vector3d bearing = ObservationBearing(
          obs, graph.intrinsics.at(node_it->second->intrinsics_id));
      view.rays.push_back(
          {obs.image_id, info.unit, info.slot, info.rt * bearing});
    }
    std::set<UnitId> units;
    for (const auto& ray : view.rays) units.insert(ray.unit_id);
    if (view.rays.size() < 2 || units.size() < 2) {
      ++dropped;
      continue;
    }
    const int cap = options.max_track_length;
    if (options.subsample_tracks && cap >= 2 &&
        static_cast<int>(view.rays.size()) > cap) {
      std::vector<TrackView::Ray> kept;
      kept.push_back(view.rays.front());
      const double stride =
          static_cast<double>(view.rays.size() - 1) / (cap - 1);
      for (int m = 1; m + 1 < cap; ++m) {
        kept.push_back(view.rays[static_cast<size_t>(std::lround(m * stride))]);
      }
      kept.push_back(view.rays.back());
      view.rays = std::move(kept);
    }
    views.push_back(std::move(view));
  }
  if (dropped_short) *dropped_short = dropped;
  return views;
}

InitPositionsResult InitPositionsL1(const ViewGraph& graph,
                                    const RotationField& rotations,
                                    const TranslationOptions& options) {
  const Context ctx = MakeContext(graph, rotations);

  // The distance objective determines positions only within a connected
  // unit graph.
  {
    std::map<UnitId, UnitId> parent;
    for (UnitId u : ctx.units) parent[u] = u;
    const std::function<UnitId(UnitId)> find = [&](UnitId x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };
    for (const RelativePoseEdge& edge : graph.edges) {
      parent[find(ctx.images.at(edge.i).unit)] =
          find(ctx.images.at(edge.j).unit);
    }
    std::set<UnitId> roots;
    for (UnitId u : ctx.units) roots.insert(find(u));
    if (roots.size() > 1) {
      throw std::runtime_error(
          "InitPositionsL1: unit graph is disconnected (" +
          std::to_string(roots.size()) + " components)");
    }
  }

  // Column layout: unit positions (anchor eliminated), internal
  // translations (reference slot eliminated), then points when tracks join
  // the initialization.
  const std::vector<TrackView> views =
      options.init_with_tracks
          ? BuildTrackViews(graph, rotations, options)
          : std::vector<TrackView>{};
  std::map<UnitId, int> unit_col;
  std::map<SlotId, int> slot_col;
  std::map<PointId, int> point_col;
  int next_col = 0;
  for (UnitId unit : ctx.units) {
    if (unit == ctx.anchor_unit) continue;
    unit_col[unit] = next_col;
    next_col += 3;
  }
  for (SlotId slot : ctx.slots) {
    if (slot == ctx.reference_slot) continue;
    slot_col[slot] = next_col;
    next_col += 3;
  }
  for (const TrackView& view : views) {
    point_col[view.point_id] = next_col;
    next_col += 3;
  }

  AdmmL1Problem admm(next_col);
  for (const RelativePoseEdge& edge : graph.edges) {
    const ImageInfo& info_i = ctx.images.at(edge.i);
    const ImageInfo& info_j = ctx.images.at(edge.j);

    // A x = -C_ij as a function of the unknowns; anchored entries drop out.
    std::map<int, Eigen::Matrix3d> coeffs;
    const auto add = [&coeffs](int col, const Eigen::Matrix3d& m) {
      if (col < 0) return;
      auto [it, inserted] = coeffs.emplace(col, m);
      if (!inserted) it->second += m;
    };
    const auto unit_of = [&](UnitId u) {
      return u == ctx.anchor_unit ? -1 : unit_col.at(u);
    };
    const auto slot_of = [&](SlotId s) {
      return s == ctx.reference_slot ? -1 : slot_col.at(s);
    };
    add(unit_of(info_i.unit), -Eigen::Matrix3d::Identity());
    add(unit_of(info_j.unit), Eigen::Matrix3d::Identity());
    add(slot_of(info_j.slot), -info_j.rt);
    add(slot_of(info_i.slot), info_i.rt);

    Eigen::MatrixXd a(3, 3 * coeffs.size());
    std::vector<int> indices;
    indices.reserve(3 * coeffs.size());
    int block = 0;
    for (const auto& [col, m] : coeffs) {
      a.middleCols(3 * block, 3) = m;
      indices.push_back(col);
      indices.push_back(col + 1);
      indices.push_back(col + 2);
      ++block;
    }
    const Eigen::Vector3d direction = info_j.rt * edge.translation_ij;
    admm.AddTerm(a, indices, Eigen::Vector3d::Zero(), direction);
  }

  // Camera-to-point terms s_ik w_ik - (p_k - c_i) with the per-ray depth
  // scale s_ik >= 1; this is what resolves baseline scales on collinear
  // trajectories where the edge terms alone are scale-free.
  for (const TrackView& view : views) {
    for (const TrackView::Ray& ray : view.rays) {
      const ImageInfo& info = ctx.images.at(ray.image_id);
      std::map<int, Eigen::Matrix3d> coeffs;
      const auto add = [&coeffs](int col, const Eigen::Matrix3d& m) {
        if (col < 0) return;
        auto [it, inserted] = coeffs.emplace(col, m);
        if (!inserted) it->second += m;
      };
      // e = s w - p + c_u - R_i^T t_s
      add(point_col.at(view.point_id), -Eigen::Matrix3d::Identity());
      add(ray.unit_id == ctx.anchor_unit ? -1 : unit_col.at(ray.unit_id),
          Eigen::Matrix3d::Identity());
      add(ray.slot_id == ctx.reference_slot ? -1 : slot_col.at(ray.slot_id),
          -info.rt);
      Eigen::MatrixXd a(3, 3 * coeffs.size());
      std::vector<int> indices;
      indices.reserve(3 * coeffs.size());
      int block = 0;
      for (const auto& [col, m] : coeffs) {
        a.middleCols(3 * block, 3) = m;
        indices.push_back(col);
        indices.push_back(col + 1);
        indices.push_back(col + 2);
        ++block;
      }
      admm.AddTerm(a, indices, Eigen::Vector3d::Zero(),
                   Eigen::VectorXd(ray.world_ray));
    }
  }

  const AdmmResult solution = SolveAdmmL1(admm, options.admm);

  InitPositionsResult out;
  out.converged = solution.converged;
  out.iterations = solution.iterations;
  out.objective = solution.objective;
  for (UnitId unit : ctx.units) {
    out.positions.unit_position[unit] =
        unit == ctx.anchor_unit
            ? Eigen::Vector3d::Zero()
            : Eigen::Vector3d(solution.x.segment<3>(unit_col.at(unit)));
  }
  for (SlotId slot : ctx.slots) {
    out.positions.internal_translation[slot] =
        slot == ctx.reference_slot
            ? Eigen::Vector3d::Zero()
            : Eigen::Vector3d(solution.x.segment<3>(slot_col.at(slot)));
  }
  int scale_index = 0;
  for (const RelativePoseEdge& edge : graph.edges) {
    out.scales.value[{edge.i, edge.j}] = solution.scales(scale_index++);
  }
  for (const auto& [point, col] : point_col) {
    out.points[point] = Eigen::Vector3d(solution.x.segment<3>(col));
  }
  return out;
}

TranslationProblem BuildEdgeAngleProblem(const ViewGraph& graph,
                                         const RotationField& rotations,
                                         const PositionField& init,
                                         const TranslationOptions& options,
                                         bool bilinear) {
  const Context ctx = MakeContext(graph, rotations);
  CheckFinite(init, "BuildEdgeAngleProblem");

  TranslationProblem tp;
  AddPositionBlocks(tp, ctx, init);
  const RobustKernel kernel = RobustKernel::Cauchy(options.cauchy_scale);

  for (const RelativePoseEdge& edge : graph.edges) {
    const ImageInfo& info_i = ctx.images.at(edge.i);
    const ImageInfo& info_j = ctx.images.at(edge.j);
    const Eigen::Vector3d b = info_j.rt * edge.translation_ij;
    std::vector<int> blocks = {
        tp.unit_block.at(info_i.unit), tp.unit_block.at(info_j.unit),
        tp.slot_block.at(info_i.slot), tp.slot_block.at(info_j.slot)};
    if (bilinear) {
      // d starts at the inverse of the current baseline length.
      const Eigen::Vector3d c =
          init.unit_position.at(info_i.unit) - init.unit_position.at(info_j.unit) +
          info_j.rt * init.internal_translation.at(info_j.slot) -
          info_i.rt * init.internal_translation.at(info_i.slot);
      const double d0 = std::clamp(1.0 / std::max(c.norm(), 1e-300), 1e-9, 1e9);
      const int d_block = tp.problem.AddBlock(std::span(&d0, 1));
      tp.aux_blocks.push_back(d_block);
      blocks.push_back(d_block);
      tp.problem.AddTerm(
          std::make_shared<EdgeBilinearTerm>(b, info_i.rt, info_j.rt),
          std::move(blocks), kernel);
    } else {
      tp.problem.AddTerm(
          std::make_shared<EdgeAngleTerm>(b, info_i.rt, info_j.rt),
          std::move(blocks), kernel);
    }
  }
  return tp;
}

TranslationProblem BuildTrackAngleProblem(const ViewGraph& graph,
                                          const RotationField& rotations,
                                          const PositionField& init,
                                          const PointField& points,
                                          const TranslationOptions& options,
                                          bool bilinear) {
  const Context ctx = MakeContext(graph, rotations);
  CheckFinite(init, "BuildTrackAngleProblem");

  TranslationProblem tp;
  AddPositionBlocks(tp, ctx, init);
  const RobustKernel kernel = RobustKernel::Cauchy(options.cauchy_scale);

  const std::vector<TrackView> views = BuildTrackViews(graph, rotations, options);
  for (const TrackView& view : views) {
    const auto point_it = points.find(view.point_id);
    if (point_it == points.end()) continue;
    if (!point_it->second.allFinite()) {
      throw std::invalid_argument("BuildTrackAngleProblem: non-finite point " +
                                  std::to_string(view.point_id));
    }
    const int point_block =
        tp.problem.AddBlock(std::span(point_it->second.data(), 3));
    tp.point_block[view.point_id] = point_block;

    for (const TrackView::Ray& ray : view.rays) {
      const ImageInfo& info = ctx.images.at(ray.image_id);
      // Rays pointing away from the initialized point are geometrically
      // impossible matches; exclude them from this invocation, like the
      // behind-camera rule in bundle adjustment.
      const Eigen::Vector3d camera =
          init.unit_position.at(ray.unit_id) -
          info.rt * init.internal_translation.at(ray.slot_id);
      if ((point_it->second - camera).dot(ray.world_ray) <= 0.0) continue;
      std::vector<int> blocks = {tp.unit_block.at(ray.unit_id),
                                 tp.slot_block.at(ray.slot_id), point_block};
      if (bilinear) {
        const Eigen::Vector3d u =
            point_it->second - init.unit_position.at(ray.unit_id) +
            info.rt * init.internal_translation.at(ray.slot_id);
        const double d0 = std::clamp(1.0 / std::max(u.norm(), 1e-300), 1e-9, 1e9);
        const int d_block = tp.problem.AddBlock(std::span(&d0, 1));
        tp.aux_blocks.push_back(d_block);
        blocks.push_back(d_block);
        tp.problem.AddTerm(
            std::make_shared<TrackBilinearTerm>(ray.world_ray, info.rt),
            std::move(blocks), kernel);
      } else {
        tp.problem.AddTerm(
            std::make_shared<TrackAngleTerm>(ray.world_ray, info.rt),
            std::move(blocks), kernel);
      }
    }
  }
  return tp;
}

RefineResult RefinePositionsAngle(const ViewGraph& graph,
                                  const RotationField& rotations,
                                  const PositionField& init,
                                  const TranslationOptions& options) {
  TranslationProblem tp =
      BuildEdgeAngleProblem(graph, rotations, init, options, /*bilinear=*/false);
  RefineResult out;
  out.summary = LevenbergMarquardt(tp.problem, options.lm);
  out.positions = ExtractPositions(tp);
  return out;
}

TriangulationResult TriangulateL1(const ViewGraph& graph,
                                  const RotationField& rotations,
                                  const PositionField& positions,
                                  const TranslationOptions& options) {
  const Context ctx = MakeContext(graph, rotations);
  CheckFinite(positions, "TriangulateL1");
  TriangulationResult result;

  const std::vector<TrackView> views =
      BuildTrackViews(graph, rotations, options, &result.dropped_short);
  result.attempted = static_cast<int>(views.size()) + result.dropped_short;

  const double min_angle = options.min_triangulation_angle_deg * EIGEN_PI / 180.0;

  enum class Outcome { kOk, kLowAngle, kBehind };
  std::vector<Outcome> outcomes(views.size(), Outcome::kLowAngle);
  std::vector<Eigen::Vector3d> solutions(views.size());

  RunParallel(static_cast<int>(views.size()), options.threads, [&](int v) {
    const TrackView& view = views[v];
    std::vector<Eigen::Vector3d> centers(view.rays.size());
    for (size_t r = 0; r < view.rays.size(); ++r) {
      const TrackView::Ray& ray = view.rays[r];
      const ImageInfo& info = ctx.images.at(ray.image_id);
      centers[r] = positions.unit_position.at(ray.unit_id) -
                   info.rt * positions.internal_translation.at(ray.slot_id);
    }

    double max_angle = 0.0;
    for (size_t a = 0; a < view.rays.size(); ++a) {
      for (size_t b = a + 1; b < view.rays.size(); ++b) {
        const Eigen::Vector3d& wa = view.rays[a].world_ray;
        const Eigen::Vector3d& wb = view.rays[b].world_ray;
        max_angle = std::max(max_angle,
                             std::atan2(wa.cross(wb).norm(), wa.dot(wb)));
      }
    }
    if (max_angle < min_angle) {
      outcomes[v] = Outcome::kLowAngle;
      return;
    }

    // Midpoint of the common perpendicular of the first two rays.
    Eigen::Vector3d seed;
    {
      const Eigen::Vector3d &d1 = view.rays[0].world_ray,
                            &d2 = view.rays[1].world_ray;
      const Eigen::Vector3d &p1 = centers[0], &p2 = centers[1];
      Eigen::Matrix2d m;
      m << d1.dot(d1), -d1.dot(d2), d1.dot(d2), -d2.dot(d2);
      const Eigen::Vector2d rhs(d1.dot(p2 - p1), d2.dot(p2 - p1));
      const double det = m.determinant();
      if (std::abs(det) > 1e-12) {
        const Eigen::Vector2d lambda = m.inverse() * rhs;
        seed = 0.5 * (p1 + lambda(0) * d1 + p2 + lambda(1) * d2);
      } else {
        seed = 0.5 * (p1 + p2);
      }
    }

    AdmmL1Problem point_problem(3);
    for (size_t r = 0; r < view.rays.size(); ++r) {
      const Eigen::Matrix3d s = Skew(view.rays[r].world_ray);
      point_problem.AddTerm(s, {0, 1, 2}, s * centers[r]);
    }
    AdmmOptions admm = options.admm;
    admm.initial_unknowns = seed;
    Eigen::Vector3d point;
    try {
      point = SolveAdmmL1(point_problem, admm).x;
    } catch (const std::runtime_error&) {
      outcomes[v] = Outcome::kLowAngle;  // numerically degenerate ray set
      return;
    }

    int behind = 0;
    for (size_t r = 0; r < view.rays.size(); ++r) {
      if ((point - centers[r]).dot(view.rays[r].world_ray) <= 0.0) ++behind;
    }
    if (2 * behind > static_cast<int>(view.rays.size())) {
      outcomes[v] = Outcome::kBehind;
      return;
    }
    solutions[v] = point;
    outcomes[v] = Outcome::kOk;
  });

  for (size_t v = 0; v < views.size(); ++v) {
    switch (outcomes[v]) {
      case Outcome::kOk:
        result.points[views[v].point_id] = solutions[v];
        break;
      case Outcome::kLowAngle:
        ++result.dropped_low_angle;
        break;
      case Outcome::kBehind:
        ++result.dropped_behind;
        break;
    }
  }
  return result;
}

JointRefineResult JointRefine(const ViewGraph& graph,
                              const RotationField& rotations,
                              const PositionField& positions,
                              const PointField& points,
                              const TranslationOptions& options) {
  TranslationProblem tp = BuildTrackAngleProblem(graph, rotations, positions,
                                                 points, options,
                                                 /*bilinear=*/false);
  JointRefineResult out;
  out.summary = LevenbergMarquardt(tp.problem, options.lm);
  out.positions = ExtractPositions(tp);
  out.points = ExtractPoints(tp);
  return out;
}

const char* ToString(AblationKind kind) {
  switch (kind) {
    case AblationKind::kTransOnlyBilinear: return "trans_only_bilinear";
    case AblationKind::kTransOnlyNonbilinear: return "trans_only_nonbilinear";
    case AblationKind::kTracksOnlyBilinear: return "tracks_only_bilinear";
    case AblationKind::kTracksOnlyNonbilinear: return "tracks_only_nonbilinear";
    case AblationKind::kHybridBilinear: return "hybrid_bilinear";
    case AblationKind::kHybridNonbilinear: return "hybrid_nonbilinear";
  }
  return "unknown";
}

AblationOutcome RunAblationVariant(AblationKind kind, const ViewGraph& graph,
                                   const RotationField& rotations,
                                   const TranslationOptions& options,
                                   std::uint64_t seed) {
  const Context ctx = MakeContext(graph, rotations);
  AblationOutcome out;
  out.kind = kind;

  const auto refine_bilinear = [&](const PositionField& init,
                                   const PointField* points) {
    TranslationProblem tp =
        points ? BuildTrackAngleProblem(graph, rotations, init, *points,
                                        options, /*bilinear=*/true)
               : BuildEdgeAngleProblem(graph, rotations, init, options,
                                       /*bilinear=*/true);
    LmOptions lm = options.lm;
    lm.post_step = ClampAuxNonnegative(tp.aux_blocks);
    LevenbergMarquardt(tp.problem, lm);
    out.positions = ExtractPositions(tp);
    if (points) {
      out.points = ExtractPoints(tp);
      out.has_points = true;
    }
  };

  const auto random_init = [&](PositionField& positions, PointField& points) {
    Rng rng(seed);
    for (UnitId unit : ctx.units) {
      positions.unit_position[unit] =
          unit == ctx.anchor_unit
              ? Eigen::Vector3d::Zero()
              : Eigen::Vector3d(rng.Uniform(), rng.Uniform(), rng.Uniform());
    }
    for (SlotId slot : ctx.slots) {
      positions.internal_translation[slot] = Eigen::Vector3d::Zero();
    }
    for (const TrackView& view : BuildTrackViews(graph, rotations, options)) {
      points[view.point_id] =
          Eigen::Vector3d(rng.Uniform(), rng.Uniform(), rng.Uniform());
    }
  };

  switch (kind) {
    case AblationKind::kTransOnlyBilinear: {
      TranslationOptions trans_only = options;
      trans_only.init_with_tracks = false;
      const InitPositionsResult init =
          InitPositionsL1(graph, rotations, trans_only);
      refine_bilinear(init.positions, nullptr);
      break;
    }
    case AblationKind::kTransOnlyNonbilinear: {
      TranslationOptions trans_only = options;
      trans_only.init_with_tracks = false;
      const InitPositionsResult init =
          InitPositionsL1(graph, rotations, trans_only);
      out.positions =
          RefinePositionsAngle(graph, rotations, init.positions, options).positions;
      break;
    }
    case AblationKind::kTracksOnlyBilinear: {
      PositionField init;
      PointField points;
      random_init(init, points);
      refine_bilinear(init, &points);
      break;
    }
    case AblationKind::kTracksOnlyNonbilinear: {
      PositionField init;
      PointField points;
      random_init(init, points);
      const JointRefineResult refined =
          JointRefine(graph, rotations, init, points, options);
      out.positions = refined.positions;
      out.points = refined.points;
      out.has_points = true;
      break;
    }
    case AblationKind::kHybridBilinear:
    case AblationKind::kHybridNonbilinear: {
      const InitPositionsResult init = InitPositionsL1(graph, rotations, options);
      const RefineResult refined =
          RefinePositionsAngle(graph, rotations, init.positions, options);
      const TriangulationResult tri =
          TriangulateL1(graph, rotations, refined.positions, options);
      if (kind == AblationKind::kHybridBilinear) {
        refine_bilinear(refined.positions, &tri.points);
      } else {
        const JointRefineResult joint =
            JointRefine(graph, rotations, refined.positions, tri.points, options);
        out.positions = joint.positions;
        out.points = joint.points;
        out.has_points = true;
      }
      break;
    }
  }
  return out;
}

}  // namespace rigsfm
