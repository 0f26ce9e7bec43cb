#include "rigsfm/pipeline.hpp"

#include "rigsfm/bundle_adjustment.hpp"
#include "rigsfm/graph.hpp"
#include "rigsfm/io.hpp"
#include "rigsfm/rotation_averaging.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace rigsfm {
namespace {

using Json = nlohmann::ordered_json;

const std::set<std::string>& KnownStageTokens() {
  static const std::set<std::string> tokens{"angle_refine", "joint_refine", "ba"};
  return tokens;
}

void SetConfigKey(PipelineConfig& cfg, const std::string& key, const Json& value) {
  try {
    if (key == "rotation.sigma_deg") {
      cfg.rotation_sigma_deg = value.get<double>();
    } else if (key == "rotation.l1_iterations") {
      cfg.rotation_l1_iterations = value.get<int>();
    } else if (key == "rotation.irls_update_tol_deg") {
      cfg.rotation_irls_update_tol_deg = value.get<double>();
    } else if (key == "rotation.irls_max_iterations") {
      cfg.rotation_irls_max_iterations = value.get<int>();
    } else if (key == "translation.cauchy_scale") {
      cfg.translation_cauchy_scale = value.get<double>();
    } else if (key == "translation.min_triangulation_angle_deg") {
      cfg.translation_min_angle_deg = value.get<double>();
    } else if (key == "translation.max_track_length") {
      cfg.translation_max_track_length = value.get<int>();
    } else if (key == "translation.subsample_tracks") {
      cfg.translation_subsample_tracks = value.get<bool>();
    } else if (key == "translation.max_edge_rotation_error_deg") {
      cfg.translation_max_edge_error_deg = value.get<double>();
    } else if (key == "admm.rho") {
      cfg.admm_rho = value.get<double>();
    } else if (key == "admm.max_iterations") {
      cfg.admm_max_iterations = value.get<int>();
    } else if (key == "admm.primal_tol") {
      cfg.admm_primal_tol = value.get<double>();
    } else if (key == "admm.dual_tol") {
      cfg.admm_dual_tol = value.get<double>();
    } else if (key == "lm.max_iterations") {
      cfg.lm_max_iterations = value.get<int>();
    } else if (key == "lm.function_tolerance") {
      cfg.lm_function_tolerance = value.get<double>();
    } else if (key == "lm.gradient_tolerance") {
      cfg.lm_gradient_tolerance = value.get<double>();
    } else if (key == "ba.huber_px") {
      cfg.ba_huber_px = value.get<double>();
    } else if (key == "ba.max_px_filter") {
      cfg.ba_max_px_filter = value.get<double>();
    } else if (key == "ba.max_iterations") {
      cfg.ba_max_iterations = value.get<int>();
    } else if (key == "ba.refine_intrinsics") {
      cfg.ba_refine_intrinsics = value.get<bool>();
    } else if (key == "stages.skip") {
      cfg.stages_skip.clear();
      for (const auto& token : value) {
        cfg.stages_skip.push_back(token.get<std::string>());
      }
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "threads") {
      cfg.threads = value.get<int>();
    } else {
      throw PipelineError(PipelineErrorKind::kInput, "config",
                          "unknown configuration key '" + key + "'");
    }
  } catch (const Json::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "config",
                        "bad value for '" + key + "': " + err.what());
  }
  for (const std::string& token : cfg.stages_skip) {
    if (!KnownStageTokens().count(token)) {
      throw PipelineError(PipelineErrorKind::kInput, "config",
                          "unknown stage token '" + token +
                              "' in stages.skip (expected angle_refine, "
                              "joint_refine or ba)");
    }
  }
}

bool SkipStage(const PipelineConfig& cfg, const char* token) {
  return std::find(cfg.stages_skip.begin(), cfg.stages_skip.end(), token) !=
         cfg.stages_skip.end();
}

RotationAveragingOptions RotationOptions(const PipelineConfig& cfg) {
  RotationAveragingOptions opts;
  opts.l1_iterations = cfg.rotation_l1_iterations;
  opts.irls_sigma_deg = cfg.rotation_sigma_deg;
  opts.irls_update_tol_deg = cfg.rotation_irls_update_tol_deg;
  opts.irls_max_iterations = cfg.rotation_irls_max_iterations;
  return opts;
}

TranslationOptions TranslationOpts(const PipelineConfig& cfg) {
  TranslationOptions opts;
  opts.cauchy_scale = cfg.translation_cauchy_scale;
  opts.min_triangulation_angle_deg = cfg.translation_min_angle_deg;
  opts.max_track_length = cfg.translation_max_track_length;
  opts.subsample_tracks = cfg.translation_subsample_tracks;
  opts.threads = cfg.threads;
  opts.admm.rho = cfg.admm_rho;
  opts.admm.max_iterations = cfg.admm_max_iterations;
  opts.admm.primal_tolerance = cfg.admm_primal_tol;
  opts.admm.dual_tolerance = cfg.admm_dual_tol;
  opts.lm.max_iterations = cfg.lm_max_iterations;
  opts.lm.function_tolerance = cfg.lm_function_tolerance;
  opts.lm.gradient_tolerance = cfg.lm_gradient_tolerance;
  return opts;
}

StageReport FromLmSummary(const char* stage, const LmSummary& summary) {
  StageReport report;
  report.stage = stage;
  report.objective_before = summary.initial_cost;
  report.objective_after = summary.final_cost;
  report.iterations = summary.iterations;
  report.converged = Converged(summary.status);
  return report;
}

StageReport FromRotationSummary(const char* stage,
                                const RotationSolveSummary& summary) {
  StageReport report;
  report.stage = stage;
  report.objective_before = summary.initial_residual_rad;
  report.objective_after = summary.final_residual_rad;
  report.iterations = summary.iterations;
  report.converged = summary.converged;
  return report;
}

}  // namespace

std::string StageReportJson(const StageReport& report) {
  Json doc;
  doc["stage"] = report.stage;
  doc["objective_before"] = report.objective_before;
  doc["objective_after"] = report.objective_after;
  doc["iterations"] = report.iterations;
  doc["converged"] = report.converged;
  for (const auto& [key, value] : report.counters) {
    doc[key] = value;
  }
  return doc.dump(2) + "\n";
}

PipelineConfig ParsePipelineConfigJson(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& err) {
    throw PipelineError(PipelineErrorKind::kInput, "config",
                        std::string("config JSON: ") + err.what());
  }
  if (!doc.is_object()) {
    throw PipelineError(PipelineErrorKind::kInput, "config",
                        "config JSON: top level must be an object");
  }
  PipelineConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    SetConfigKey(cfg, key, value);
  }
  return cfg;
}

void ApplyConfigOverride(PipelineConfig& config, const std::string& key,
                         const std::string& value) {
  Json parsed;
  if (key == "stages.skip") {
    // Comma-separated list on the command line.
    parsed = Json::array();
    std::istringstream stream(value);
    std::string token;
    while (std::getline(stream, token, ',')) {
      if (!token.empty()) parsed.push_back(token);
    }
  } else {
    parsed = Json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) parsed = value;  // bare strings
  }
  SetConfigKey(config, key, parsed);
}

PipelineResult SolvePipeline(const ViewGraph& input, const PipelineConfig& cfg) {
  PipelineResult result;

  const std::vector<std::string> violations = Validate(input);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "view graph has " << violations.size() << " violations;";
    for (const std::string& v : violations) msg << " [" << v << "]";
    throw PipelineError(PipelineErrorKind::kInput, "validate", msg.str());
  }

  ViewGraph graph;
  try {
    graph = LargestConnectedComponent(input);
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "largest_component", err.what());
  }
  {
    StageReport report;
    report.stage = "largest_component";
    report.counters["images"] = static_cast<std::int64_t>(graph.images.size());
    report.counters["images_dropped"] =
        static_cast<std::int64_t>(input.images.size() - graph.images.size());
    report.counters["edges"] = static_cast<std::int64_t>(graph.edges.size());
    report.counters["tracks"] = static_cast<std::int64_t>(graph.tracks.size());
    result.reports.push_back(std::move(report));
  }

  ImageId anchor_image = graph.images.front().image_id;
  UnitId anchor_unit = graph.images.front().unit_id;
  for (const ImageNode& node : graph.images) {
    anchor_image = std::min(anchor_image, node.image_id);
    anchor_unit = std::min(anchor_unit, node.unit_id);
  }

  // Decoupled rotation averaging: per-image field, internal rotations,
  // rigid-unit field, composed camera rotations.
  const RotationAveragingOptions rot_opts = RotationOptions(cfg);
  RotationField camera_rotations;
  std::map<SlotId, Rotation> rig_rotations;
  UnitRotationField unit_rotations;
  try {
    RotationSolveSummary summary;
    const RotationField global =
        AverageRotations(graph, anchor_image, rot_opts, &summary);
    result.reports.push_back(
        FromRotationSummary("rotation_averaging_images", summary));

    rig_rotations = EstimateInternalRotations(global, graph.images);
    {
      StageReport report;
      report.stage = "internal_rotations";
      report.counters["slots"] = static_cast<std::int64_t>(rig_rotations.size());
      result.reports.push_back(std::move(report));
    }

    unit_rotations =
        AverageUnitRotations(graph, rig_rotations, anchor_unit, rot_opts, &summary);
    result.reports.push_back(
        FromRotationSummary("rotation_averaging_units", summary));

    camera_rotations =
        ComposeCameraRotations(rig_rotations, unit_rotations, graph.images);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kSolver, "rotation_averaging",
                        err.what());
  }

  // Hybrid translation averaging, on the rotation-consistent edge subset.
  const TranslationOptions trans_opts = TranslationOpts(cfg);
  PositionField positions;
  PointField points;
  try {
    int dropped_edges = 0;
    const ViewGraph trans_graph = FilterEdgesByRotationConsistency(
        graph, camera_rotations, cfg.translation_max_edge_error_deg,
        &dropped_edges);
    {
      StageReport report;
      report.stage = "translation_edge_filter";
      report.counters["kept"] = static_cast<std::int64_t>(trans_graph.edges.size());
      report.counters["dropped"] = dropped_edges;
      result.reports.push_back(std::move(report));
    }
    const InitPositionsResult init =
        InitPositionsL1(trans_graph, camera_rotations, trans_opts);
    positions = init.positions;
    {
      StageReport report;
      report.stage = "translation_init_l1";
      report.objective_before = init.objective;  // convex; best-iterate value
      report.objective_after = init.objective;
      report.iterations = init.iterations;
      report.converged = init.converged;
      result.reports.push_back(std::move(report));
    }

    if (!SkipStage(cfg, "angle_refine")) {
      const RefineResult refined =
          RefinePositionsAngle(trans_graph, camera_rotations, positions, trans_opts);
      positions = refined.positions;
      result.reports.push_back(
          FromLmSummary("translation_angle_refine", refined.summary));
    }

    const TriangulationResult tri =
        TriangulateL1(trans_graph, camera_rotations, positions, trans_opts);
    points = tri.points;
    {
      StageReport report;
      report.stage = "triangulation_l1";
      report.counters["attempted"] = tri.attempted;
      report.counters["triangulated"] = static_cast<std::int64_t>(tri.points.size());
      report.counters["dropped_short"] = tri.dropped_short;
      report.counters["dropped_low_angle"] = tri.dropped_low_angle;
      report.counters["dropped_behind"] = tri.dropped_behind;
      result.reports.push_back(std::move(report));
    }

    if (!SkipStage(cfg, "joint_refine")) {
      const JointRefineResult joint = JointRefine(trans_graph, camera_rotations,
                                                  positions, points, trans_opts);
      positions = joint.positions;
      points = joint.points;
      result.reports.push_back(
          FromLmSummary("translation_joint_refine", joint.summary));
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kSolver, "translation_averaging",
                        err.what());
  }

  // Assemble the reconstruction state.
  ReconstructionState state;
  state.anchor_unit = anchor_unit;
  state.unit_rotation = unit_rotations;
  for (const auto& [unit, position] : positions.unit_position) {
    state.unit_position[unit] = position;
  }
  state.rig.rotation = rig_rotations;
  state.rig.translation = positions.internal_translation;
  state.rig.reference_slot = positions.internal_translation.begin()->first;
  state.points = points;
  state.intrinsics = graph.intrinsics;

  if (!SkipStage(cfg, "ba")) {
    try {
      int skipped_backward = 0;
      std::vector<Observation> observations =
          CollectObservations(graph, &skipped_backward);

      BaOptions ba;
      ba.huber_scale_px = cfg.ba_huber_px;
      ba.refine_intrinsics = cfg.ba_refine_intrinsics;
      ba.lm.max_iterations = cfg.ba_max_iterations;
      ba.lm.function_tolerance = cfg.lm_function_tolerance;
      ba.lm.gradient_tolerance = cfg.lm_gradient_tolerance;

      ba.stage = BaStage::kRotationsFixed;
      BaResult first = MultiCameraBa(state, graph.images, observations, ba);
      state = first.state;
      {
        StageReport report = FromLmSummary("ba_rotations_fixed", first.summary);
        report.counters["observations"] = first.active_observations;
        report.counters["excluded_behind_camera"] = first.excluded_behind_camera;
        report.counters["skipped_backward_bearings"] = skipped_backward;
        result.reports.push_back(std::move(report));
      }

      const FilterResult filtered =
          FilterObservations(state, graph.images, observations, cfg.ba_max_px_filter);
      for (PointId point : filtered.removed_points) {
        state.points.erase(point);
      }
      {
        StageReport report;
        report.stage = "ba_observation_filter";
        report.counters["kept"] =
            static_cast<std::int64_t>(filtered.observations.size());
        report.counters["dropped_error"] = filtered.dropped_error;
        report.counters["dropped_behind"] = filtered.dropped_behind;
        report.counters["removed_points"] =
            static_cast<std::int64_t>(filtered.removed_points.size());
        result.reports.push_back(std::move(report));
      }

      ba.stage = BaStage::kFull;
      BaResult second =
          MultiCameraBa(state, graph.images, filtered.observations, ba);
      state = second.state;
      {
        StageReport report = FromLmSummary("ba_full", second.summary);
        report.counters["observations"] = second.active_observations;
        report.counters["excluded_behind_camera"] = second.excluded_behind_camera;
        result.reports.push_back(std::move(report));
      }
    } catch (const std::exception& err) {
      throw PipelineError(PipelineErrorKind::kSolver, "bundle_adjustment",
                          err.what());
    }
  }

  result.state = std::move(state);
  result.images = graph.images;
  return result;
}

void WriteSolveArtifacts(const PipelineResult& result,
                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  WritePoseFile(out_dir / "images.txt", ImagePoses(result.state, result.images));
  WritePoseFile(out_dir / "units.txt", UnitPoses(result.state));
  WritePoseFile(out_dir / "rig.txt", RigPoses(result.state.rig));
  WritePointsFile(out_dir / "points.txt", result.state.points);

  const std::filesystem::path report_dir = out_dir / "reports";
  std::filesystem::create_directories(report_dir);
  Json summary = Json::array();
  for (size_t k = 0; k < result.reports.size(); ++k) {
    const StageReport& report = result.reports[k];
    char name[64];
    std::snprintf(name, sizeof(name), "%02zu_%s.json", k, report.stage.c_str());
    std::ofstream out(report_dir / name, std::ios::binary);
    out << StageReportJson(report);
    summary.push_back(Json::parse(StageReportJson(report)));
  }
  std::ofstream out(out_dir / "report.json", std::ios::binary);
  out << summary.dump(2) << "\n";
}

std::vector<AblationRow> RunAblationTable(
    const ViewGraph& input, const PipelineConfig& cfg,
    const std::map<std::int64_t, PoseRecord>& truth_images) {
  const ViewGraph graph = LargestConnectedComponent(input);
  ImageId anchor_image = graph.images.front().image_id;
  UnitId anchor_unit = graph.images.front().unit_id;
  for (const ImageNode& node : graph.images) {
    anchor_image = std::min(anchor_image, node.image_id);
    anchor_unit = std::min(anchor_unit, node.unit_id);
  }

  // All variants share one set of global camera rotations.
  const RotationAveragingOptions rot_opts = RotationOptions(cfg);
  const RotationField global = AverageRotations(graph, anchor_image, rot_opts);
  const auto rig_rotations = EstimateInternalRotations(global, graph.images);
  const UnitRotationField unit_rotations =
      AverageUnitRotations(graph, rig_rotations, anchor_unit, rot_opts);
  const RotationField camera_rotations =
      ComposeCameraRotations(rig_rotations, unit_rotations, graph.images);

  const TranslationOptions trans_opts = TranslationOpts(cfg);
  const ViewGraph trans_graph = FilterEdgesByRotationConsistency(
      graph, camera_rotations, cfg.translation_max_edge_error_deg, nullptr);
  std::vector<AblationRow> rows;
  for (const AblationKind kind :
       {AblationKind::kTransOnlyBilinear, AblationKind::kTransOnlyNonbilinear,
        AblationKind::kTracksOnlyBilinear, AblationKind::kTracksOnlyNonbilinear,
        AblationKind::kHybridBilinear, AblationKind::kHybridNonbilinear}) {
    AblationRow row;
    row.kind = kind;
    try {
      const AblationOutcome outcome =
          RunAblationVariant(kind, trans_graph, camera_rotations, trans_opts,
                             cfg.seed);
      std::map<std::int64_t, PoseRecord> estimated;
      for (const ImageNode& node : graph.images) {
        const Rotation& r = camera_rotations.at(node.image_id);
        PoseRecord pose;
        pose.rotation = r;
        pose.position = outcome.positions.unit_position.at(node.unit_id) -
                        r.Inverse() *
                            outcome.positions.internal_translation.at(node.slot_id);
        estimated[node.image_id] = pose;
      }
      row.errors = PoseErrors(estimated, truth_images);
    } catch (const std::exception& err) {
      row.failed = true;
      row.error = err.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void WriteAblationOutputs(const std::vector<AblationRow>& rows,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ofstream csv(out_dir / "ablation.csv", std::ios::binary);
  csv << "variant,failed,median_rotation_deg,mean_rotation_deg,"
         "median_position,mean_position\n";
  for (const AblationRow& row : rows) {
    char line[256];
    if (row.failed) {
      std::snprintf(line, sizeof(line), "%s,1,,,,\n", ToString(row.kind));
    } else {
      std::snprintf(line, sizeof(line), "%s,0,%.9g,%.9g,%.9g,%.9g\n",
                    ToString(row.kind), row.errors.median_rotation_deg,
                    row.errors.mean_rotation_deg, row.errors.median_position,
                    row.errors.mean_position);
    }
    csv << line;
  }

  Json doc = Json::array();
  for (const AblationRow& row : rows) {
    Json entry;
    entry["variant"] = ToString(row.kind);
    entry["failed"] = row.failed;
    if (row.failed) {
      entry["error"] = row.error;
    } else {
      entry["median_rotation_deg"] = row.errors.median_rotation_deg;
      entry["mean_rotation_deg"] = row.errors.mean_rotation_deg;
      entry["median_position"] = row.errors.median_position;
      entry["mean_position"] = row.errors.mean_position;
    }
    doc.push_back(std::move(entry));
  }
  std::ofstream json_out(out_dir / "ablation.json", std::ios::binary);
  json_out << doc.dump(2) << "\n";
}

}  // namespace rigsfm
