#pragma once

#include "rigsfm/metrics.hpp"
#include "rigsfm/report.hpp"
#include "rigsfm/scene.hpp"
#include "rigsfm/translation_averaging.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rigsfm {

/// All tunables, gathered under namespaced configuration keys. Every key has
/// a documented default; unknown keys are rejected.
struct PipelineConfig {
  // rotation.*
  double rotation_sigma_deg = 5.0;            // rotation.sigma_deg
  int rotation_l1_iterations = 5;             // rotation.l1_iterations
  double rotation_irls_update_tol_deg = 1e-3; // rotation.irls_update_tol_deg
  int rotation_irls_max_iterations = 100;     // rotation.irls_max_iterations
  // translation.*
  double translation_cauchy_scale = 0.1;      // translation.cauchy_scale
  double translation_min_angle_deg = 1.0;     // translation.min_triangulation_angle_deg
  int translation_max_track_length = 50;      // translation.max_track_length
  bool translation_subsample_tracks = true;   // translation.subsample_tracks
  // translation.max_edge_rotation_error_deg (0 disables the edge filter)
  double translation_max_edge_error_deg = 10.0;
  // admm.*
  double admm_rho = 1.0;                      // admm.rho
  int admm_max_iterations = 1000;             // admm.max_iterations
  double admm_primal_tol = 1e-8;              // admm.primal_tol
  double admm_dual_tol = 1e-8;                // admm.dual_tol
  // lm.*
  int lm_max_iterations = 100;                // lm.max_iterations
  double lm_function_tolerance = 1e-12;       // lm.function_tolerance
  double lm_gradient_tolerance = 1e-10;       // lm.gradient_tolerance
  // ba.*
  double ba_huber_px = 2.0;                   // ba.huber_px
  double ba_max_px_filter = 8.0;              // ba.max_px_filter
  int ba_max_iterations = 50;                 // ba.max_iterations
  bool ba_refine_intrinsics = false;          // ba.refine_intrinsics
  // stages.skip: subset of {"angle_refine", "joint_refine", "ba"}
  std::vector<std::string> stages_skip;
  std::uint64_t seed = 0;                     // seed
  int threads = 1;                            // threads (0 = hardware)
};

/// Strict parser for the JSON configuration document (flat object with the
/// dotted keys above). Unknown keys are an error.
PipelineConfig ParsePipelineConfigJson(const std::string& text);

/// Applies one `--key=value` override on top of a parsed config.
void ApplyConfigOverride(PipelineConfig& config, const std::string& key,
                         const std::string& value);

enum class PipelineErrorKind { kInput, kSolver, kInternal };

class PipelineError : public std::runtime_error {
 public:
  PipelineError(PipelineErrorKind kind, std::string stage,
                const std::string& message)
      : std::runtime_error(message), kind_(kind), stage_(std::move(stage)) {}

  PipelineErrorKind kind() const { return kind_; }
  const std::string& stage() const { return stage_; }

 private:
  PipelineErrorKind kind_;
  std::string stage_;
};

struct PipelineResult {
  ReconstructionState state;
  std::vector<ImageNode> images;
  std::vector<StageReport> reports;
};

/// The full motion-averaging pipeline: validate, largest component,
/// decoupled rotation averaging, hybrid translation averaging, two-round
/// multi-camera bundle adjustment with an observation filter in between.
/// Deterministic given the config seed.
PipelineResult SolvePipeline(const ViewGraph& graph, const PipelineConfig& config);

/// Writes images.txt / units.txt / rig.txt / points.txt plus per-stage JSON
/// reports under `out_dir`.
void WriteSolveArtifacts(const PipelineResult& result,
                         const std::filesystem::path& out_dir);

struct AblationRow {
  AblationKind kind = AblationKind::kHybridNonbilinear;
  bool failed = false;
  std::string error;
  ErrorReport errors;
};

/// Runs the six translation-averaging variants against ground-truth image
/// poses, sharing one set of global rotations. Per-variant failures are
/// recorded in the row and the run continues.
std::vector<AblationRow> RunAblationTable(
    const ViewGraph& graph, const PipelineConfig& config,
    const std::map<std::int64_t, PoseRecord>& truth_images);

/// ablation.csv + ablation.json, deterministic bytes.
void WriteAblationOutputs(const std::vector<AblationRow>& rows,
                          const std::filesystem::path& out_dir);

}  // namespace rigsfm
