#include "rigsfm/synthetic.hpp"

#include "helpers.hpp"
#include "rigsfm/io.hpp"
#include "rigsfm/metrics.hpp"
#include "rigsfm/rng.hpp"

#include <doctest.h>

using namespace rigsfm;
using rigsfm::testing::kDeg;

namespace {

SceneConfig TwoSlotLoop(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.num_units = 10;
  cfg.slots = {SlotSpec{},
               SlotSpec{Exp(Eigen::Vector3d(0.0, 0.45, 0.0)),
                        Eigen::Vector3d(0.9, 0.0, 0.1)}};
  cfg.trajectory = TrajectoryKind::kLoop;
  cfg.extent = 50.0;
  cfg.num_points = 120;
  cfg.seed = seed;
  return cfg;
}

std::map<std::int64_t, PoseRecord> TruthImagePoses(const SyntheticScene& scene) {
  std::map<std::int64_t, PoseRecord> poses;
  for (const ImageNode& node : scene.graph.images) {
    poses[node.image_id] = {scene.truth.CameraRotation(node),
                            scene.truth.CameraCenter(node)};
  }
  return poses;
}

}  // namespace

TEST_CASE("zero-noise scenes validate and satisfy the pose relation exactly") {
  const SyntheticScene scene = GenerateScene(TwoSlotLoop(3));
  CHECK(Validate(scene.graph).empty());

  std::map<ImageId, const ImageNode*> nodes;
  for (const ImageNode& node : scene.graph.images) nodes[node.image_id] = &node;
  for (const RelativePoseEdge& edge : scene.graph.edges) {
    const Rotation ri = scene.truth.CameraRotation(*nodes.at(edge.i));
    const Rotation rj = scene.truth.CameraRotation(*nodes.at(edge.j));
    const Eigen::Vector3d ci = scene.truth.CameraCenter(*nodes.at(edge.i));
    const Eigen::Vector3d cj = scene.truth.CameraCenter(*nodes.at(edge.j));
    CHECK(GeodesicDistance(edge.rotation_ij, rj * ri.Inverse()) < 1e-12);
    CHECK((edge.translation_ij - rj * (ci - cj).normalized()).norm() < 1e-12);
  }

  // Anchor gauge is exact.
  CHECK(scene.truth.unit_position.at(0).norm() == 0.0);
  CHECK(GeodesicDistance(scene.truth.unit_rotation.at(0), Rotation::Identity()) ==
        0.0);
  CHECK(scene.truth.rig.translation.at(0).norm() == 0.0);
}

TEST_CASE("generation is byte-identical for a fixed seed") {
  SceneConfig cfg = TwoSlotLoop(17);
  cfg.pixel_noise_sigma = 0.7;
  cfg.rotation_noise_sigma_deg = 1.0;
  cfg.edge_outlier_fraction = 0.1;
  cfg.bearing_outlier_fraction = 0.05;
  const std::string a = SerializeViewGraphJson(GenerateScene(cfg).graph);
  const std::string b = SerializeViewGraphJson(GenerateScene(cfg).graph);
  CHECK(a == b);

  cfg.seed += 1;
  const std::string c = SerializeViewGraphJson(GenerateScene(cfg).graph);
  CHECK(a != c);
}

TEST_CASE("edge outlier share matches the configured fraction") {
  int outliers = 0;
  int total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneConfig cfg = TwoSlotLoop(seed);
    cfg.num_units = 30;
    cfg.edge_outlier_fraction = 0.2;
    const SyntheticScene scene = GenerateScene(cfg);
    std::map<ImageId, const ImageNode*> nodes;
    for (const ImageNode& node : scene.graph.images) nodes[node.image_id] = &node;
    for (const RelativePoseEdge& edge : scene.graph.edges) {
      const Rotation expected = scene.truth.CameraRotation(*nodes.at(edge.j)) *
                                scene.truth.CameraRotation(*nodes.at(edge.i)).Inverse();
      if (GeodesicDistance(edge.rotation_ij, expected) > 20.0 * kDeg) ++outliers;
      ++total;
    }
  }
  const double share = static_cast<double>(outliers) / total;
  CHECK(share > 0.17);
  CHECK(share < 0.23);
}

TEST_CASE("edge rotation noise lands in the half-normal sanity band") {
  std::vector<double> noise_deg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneConfig cfg = TwoSlotLoop(seed + 40);
    cfg.num_units = 25;
    cfg.rotation_noise_sigma_deg = 2.0;
    const SyntheticScene scene = GenerateScene(cfg);
    std::map<ImageId, const ImageNode*> nodes;
    for (const ImageNode& node : scene.graph.images) nodes[node.image_id] = &node;
    for (const RelativePoseEdge& edge : scene.graph.edges) {
      const Rotation expected = scene.truth.CameraRotation(*nodes.at(edge.j)) *
                                scene.truth.CameraRotation(*nodes.at(edge.i)).Inverse();
      noise_deg.push_back(GeodesicDistance(edge.rotation_ij, expected) / kDeg);
    }
  }
  const double median = Median(noise_deg);
  CHECK(median > 1.2);
  CHECK(median < 2.2);
}

TEST_CASE("configurations without co-visibility are rejected") {
  SceneConfig cfg = TwoSlotLoop(5);
  // Sampling region far outside every view frustum.
  cfg.point_region_min = {1e5, 1e5, 1e5};
  cfg.point_region_max = {1e5 + 1.0, 1e5 + 1.0, 1e5 + 1.0};
  CHECK_THROWS_AS(GenerateScene(cfg), std::invalid_argument);
}

TEST_CASE("align_similarity recovers exact similarities") {
  Rng rng(23);
  std::vector<Eigen::Vector3d> src;
  for (int k = 0; k < 12; ++k) {
    src.emplace_back(rng.Normal(5.0), rng.Normal(5.0), rng.Normal(5.0));
  }
  // Identity on identical clouds.
  const Similarity id = AlignSimilarity(src, src);
  CHECK(id.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(GeodesicDistance(id.rotation, Rotation::Identity()) < 1e-12);
  CHECK(id.translation.norm() < 1e-12);

  const Rotation q = rng.UniformRotation();
  const Eigen::Vector3d v(4.0, -2.0, 7.0);
  std::vector<Eigen::Vector3d> dst;
  for (const auto& p : src) dst.push_back(2.0 * (q * p) + v);
  const Similarity sim = AlignSimilarity(src, dst);
  CHECK(sim.scale == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(GeodesicDistance(sim.rotation, q) < 1e-10);
  CHECK((sim.translation - v).norm() < 1e-9);
}

TEST_CASE("alignment residual beats 1000 random similarities") {
  Rng rng(29);
  std::vector<Eigen::Vector3d> src, dst;
  const Rotation q = rng.UniformRotation();
  for (int k = 0; k < 15; ++k) {
    const Eigen::Vector3d p(rng.Normal(3.0), rng.Normal(3.0), rng.Normal(3.0));
    src.push_back(p);
    dst.push_back(1.4 * (q * p) + Eigen::Vector3d(1.0, 2.0, 3.0) +
                  0.05 * Eigen::Vector3d(rng.Normal(), rng.Normal(), rng.Normal()));
  }
  const auto residual = [&](const Similarity& sim) {
    double sum = 0.0;
    for (size_t k = 0; k < src.size(); ++k) {
      sum += (sim.Apply(src[k]) - dst[k]).squaredNorm();
    }
    return sum;
  };
  const double best = residual(AlignSimilarity(src, dst));
  for (int trial = 0; trial < 1000; ++trial) {
    Similarity random;
    random.scale = rng.Uniform(0.5, 2.5);
    random.rotation = rng.UniformRotation();
    random.translation =
        Eigen::Vector3d(rng.Normal(3.0), rng.Normal(3.0), rng.Normal(3.0));
    CHECK(best <= residual(random) + 1e-12);
  }
}

TEST_CASE("pose errors vanish for identical and re-gauged states") {
  const SyntheticScene scene = GenerateScene(TwoSlotLoop(31));
  const auto truth = TruthImagePoses(scene);
  const ErrorReport same = PoseErrors(truth, truth);
  CHECK(same.median_rotation_deg == 0.0);
  CHECK(same.median_position == 0.0);

  // A global similarity of the estimate is invisible to the metric.
  Rng rng(37);
  const Rotation q = rng.UniformRotation();
  const double scale = 1.7;
  const Eigen::Vector3d shift(5.0, -3.0, 2.0);
  std::map<std::int64_t, PoseRecord> transformed;
  for (const auto& [id, pose] : truth) {
    transformed[id] = {pose.rotation * q.Inverse(),
                       scale * (q * pose.position) + shift};
  }
  const ErrorReport aligned = PoseErrors(transformed, truth);
  CHECK(aligned.median_rotation_deg < 1e-9);
  CHECK(aligned.median_position < 1e-9);
}

TEST_CASE("pose error metrics follow the stated conventions") {
  // Ten cameras, exactly half carrying a 1-degree rotation error: the
  // median is the lower middle order statistic, the mean is the average.
  Rng rng(41);
  std::map<std::int64_t, PoseRecord> truth, estimated;
  for (int k = 0; k < 10; ++k) {
    PoseRecord pose{rng.UniformRotation(),
                    Eigen::Vector3d(rng.Normal(5.0), rng.Normal(5.0), rng.Normal(5.0))};
    truth[k] = pose;
    if (k >= 5) {
      pose.rotation = Exp(1.0 * kDeg * rng.UnitVector()) * pose.rotation;
    }
    estimated[k] = pose;
  }
  const ErrorReport report = PoseErrors(estimated, truth);
  CHECK(report.median_rotation_deg == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(report.mean_rotation_deg == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(report.per_image.size() == 10);
}

TEST_CASE("pose errors reject mismatched image sets") {
  const SyntheticScene scene = GenerateScene(TwoSlotLoop(43));
  auto truth = TruthImagePoses(scene);
  auto estimated = truth;
  estimated.erase(estimated.begin()->first);
  CHECK_THROWS_AS(PoseErrors(estimated, truth), std::invalid_argument);
}

TEST_CASE("metric gauge invariance holds within 1e-9") {
  const SyntheticScene scene = GenerateScene(TwoSlotLoop(47));
  Rng rng(53);
  auto truth = TruthImagePoses(scene);
  auto estimated = truth;
  // Perturb the estimate so the errors are non-trivial.
  for (auto& [id, pose] : estimated) {
    pose.position += 0.05 * Eigen::Vector3d(rng.Normal(), rng.Normal(), rng.Normal());
    pose.rotation = Exp(0.2 * kDeg * rng.UnitVector()) * pose.rotation;
  }
  const ErrorReport base = PoseErrors(estimated, truth);

  const Rotation q = rng.UniformRotation();
  std::map<std::int64_t, PoseRecord> regauged;
  for (const auto& [id, pose] : estimated) {
    regauged[id] = {pose.rotation * q.Inverse(),
                    0.6 * (q * pose.position) + Eigen::Vector3d(9.0, -1.0, 4.0)};
  }
  const ErrorReport other = PoseErrors(regauged, truth);
  CHECK(std::abs(other.median_position - base.median_position) < 1e-9);
  CHECK(std::abs(other.median_rotation_deg - base.median_rotation_deg) < 1e-9);
  CHECK(std::abs(other.mean_position - base.mean_position) < 1e-9);
}

TEST_CASE("line trajectories remain alignable despite collinearity") {
  SceneConfig cfg;
  cfg.num_units = 12;
  cfg.slots = {SlotSpec{}};
  cfg.trajectory = TrajectoryKind::kLine;
  cfg.extent = 30.0;
  cfg.num_points = 60;
  cfg.seed = 59;
  const SyntheticScene scene = GenerateScene(cfg);
  const auto truth = TruthImagePoses(scene);
  const ErrorReport report = PoseErrors(truth, truth);
  CHECK(report.median_rotation_deg < 1e-9);
  CHECK(report.median_position < 1e-9);
}

TEST_CASE("error reports serialize to JSON and a text table") {
  ErrorReport report;
  report.median_rotation_deg = 0.25;
  report.mean_rotation_deg = 0.5;
  report.median_position = 0.1;
  report.mean_position = 0.2;
  report.per_image[7] = {0.25, 0.1};
  const std::string json = ErrorReportJson(report);
  CHECK(json.find("\"median_rotation_deg\": 0.25") != std::string::npos);
  CHECK(json.find("\"image_id\": 7") != std::string::npos);
  const std::string table = ErrorReportTable(report);
  CHECK(table.find("rotation_error_deg") != std::string::npos);
}
