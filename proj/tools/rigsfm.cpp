// Command-line front end: solve / synth / evaluate / ablate.
//
// Exit codes: 0 success, 2 input error, 3 solver non-convergence or solver
// failure, 4 internal error. Human-readable progress goes to stderr; machine
// artifacts go to files only.

#include <CLI11.hpp>

#include "rigsfm/io.hpp"
#include "rigsfm/metrics.hpp"
#include "rigsfm/pipeline.hpp"
#include "rigsfm/synthetic.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using rigsfm::PipelineError;
using rigsfm::PipelineErrorKind;

int ExitCode(PipelineErrorKind kind) {
  switch (kind) {
    case PipelineErrorKind::kInput: return 2;
    case PipelineErrorKind::kSolver: return 3;
    case PipelineErrorKind::kInternal: break;
  }
  return 4;
}

const char* KindName(PipelineErrorKind kind) {
  switch (kind) {
    case PipelineErrorKind::kInput: return "input-error";
    case PipelineErrorKind::kSolver: return "solver-non-convergence";
    case PipelineErrorKind::kInternal: break;
  }
  return "internal-error";
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw PipelineError(PipelineErrorKind::kInput, "io",
                        "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

rigsfm::PipelineConfig LoadConfig(const std::string& config_path,
                                  const std::vector<std::string>& extras) {
  rigsfm::PipelineConfig config;
  if (!config_path.empty()) {
    config = rigsfm::ParsePipelineConfigJson(ReadFile(config_path));
  }
  for (const std::string& arg : extras) {
    if (arg.rfind("--", 0) != 0) {
      throw PipelineError(PipelineErrorKind::kInput, "config",
                          "unexpected argument '" + arg +
                              "' (overrides look like --key=value)");
    }
    const size_t eq = arg.find('=');
    if (eq == std::string::npos) {
      throw PipelineError(PipelineErrorKind::kInput, "config",
                          "override '" + arg + "' is missing '=value'");
    }
    rigsfm::ApplyConfigOverride(config, arg.substr(2, eq - 2),
                                arg.substr(eq + 1));
  }
  return config;
}

void WriteErrorRecord(const fs::path& out_dir, PipelineErrorKind kind,
                      const std::string& stage, const std::string& message) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) return;
  nlohmann::ordered_json doc;
  doc["error"] = KindName(kind);
  doc["stage"] = stage;
  doc["message"] = message;
  doc["partial_artifacts"] = fs::exists(out_dir / "images.txt");
  std::ofstream out(out_dir / "error.json", std::ios::binary);
  out << doc.dump(2) << "\n";
}

rigsfm::ViewGraph LoadGraphOrInputError(const std::string& path) {
  try {
    return rigsfm::LoadViewGraph(path);
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "load", err.what());
  }
}

int RunSolve(const std::string& graph_path, const std::string& out_dir,
             const std::string& config_path,
             const std::vector<std::string>& extras) {
  // Inputs are parsed in full before anything is written.
  const rigsfm::ViewGraph graph = LoadGraphOrInputError(graph_path);
  const rigsfm::PipelineConfig config = LoadConfig(config_path, extras);
  try {
    const rigsfm::PipelineResult result = rigsfm::SolvePipeline(graph, config);
    rigsfm::WriteSolveArtifacts(result, out_dir);
    std::cerr << "solve: wrote " << result.images.size() << " image poses, "
              << result.state.points.size() << " points to " << out_dir << "\n";
    return 0;
  } catch (const PipelineError& err) {
    WriteErrorRecord(out_dir, err.kind(), err.stage(), err.what());
    throw;
  }
}

int RunSynth(const std::string& config_path, const std::string& out_dir) {
  const rigsfm::SceneConfig config = [&]() {
    try {
      return rigsfm::ParseSceneConfigJson(ReadFile(config_path));
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& err) {
      throw PipelineError(PipelineErrorKind::kInput, "config", err.what());
    }
  }();
  rigsfm::SyntheticScene scene;
  try {
    scene = rigsfm::GenerateScene(config);
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "synth", err.what());
  }
  fs::create_directories(fs::path(out_dir) / "truth");
  rigsfm::SaveViewGraph(scene.graph, fs::path(out_dir) / "graph.json");
  rigsfm::WritePoseFile(fs::path(out_dir) / "truth" / "images.txt",
                        rigsfm::ImagePoses(scene.truth, scene.graph.images));
  rigsfm::WritePoseFile(fs::path(out_dir) / "truth" / "units.txt",
                        rigsfm::UnitPoses(scene.truth));
  rigsfm::WritePoseFile(fs::path(out_dir) / "truth" / "rig.txt",
                        rigsfm::RigPoses(scene.truth.rig));
  rigsfm::WritePointsFile(fs::path(out_dir) / "truth" / "points.txt",
                          scene.truth.points);
  std::cerr << "synth: " << scene.graph.images.size() << " images, "
            << scene.graph.edges.size() << " edges, "
            << scene.graph.tracks.size() << " tracks -> " << out_dir << "\n";
  return 0;
}

int RunEvaluate(const std::string& est_dir, const std::string& truth_dir,
                const std::string& out_path) {
  rigsfm::ErrorReport report;
  try {
    const auto estimated = rigsfm::ReadPoseFile(fs::path(est_dir) / "images.txt");
    const auto truth = rigsfm::ReadPoseFile(fs::path(truth_dir) / "images.txt");
    report = rigsfm::PoseErrors(estimated, truth);
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "evaluate", err.what());
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    throw PipelineError(PipelineErrorKind::kInput, "evaluate",
                        "cannot write " + out_path);
  }
  out << rigsfm::ErrorReportJson(report);
  std::cerr << rigsfm::ErrorReportTable(report);
  return 0;
}

int RunAblate(const std::string& graph_path, const std::string& truth_dir,
              const std::string& out_dir, const std::string& config_path,
              const std::vector<std::string>& extras) {
  const rigsfm::ViewGraph graph = LoadGraphOrInputError(graph_path);
  const rigsfm::PipelineConfig config = LoadConfig(config_path, extras);
  std::map<std::int64_t, rigsfm::PoseRecord> truth;
  try {
    truth = rigsfm::ReadPoseFile(fs::path(truth_dir) / "images.txt");
  } catch (const std::exception& err) {
    throw PipelineError(PipelineErrorKind::kInput, "ablate", err.what());
  }
  const auto rows = rigsfm::RunAblationTable(graph, config, truth);
  rigsfm::WriteAblationOutputs(rows, out_dir);
  for (const auto& row : rows) {
    std::cerr << "ablate: " << rigsfm::ToString(row.kind) << " -> "
              << (row.failed ? "failed: " + row.error
                             : "median position error " +
                                   std::to_string(row.errors.median_position))
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global multi-camera structure-from-motion motion averaging"};
  app.require_subcommand(1);

  std::string graph_path, out_dir, config_path, est_dir, truth_dir, out_path;

  CLI::App* solve = app.add_subcommand("solve", "Run the full pipeline");
  solve->add_option("graph", graph_path, "view graph JSON")->required();
  solve->add_option("-o,--out", out_dir, "output directory")->required();
  solve->add_option("-c,--config", config_path, "pipeline config JSON");
  solve->allow_extras();

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  synth->add_option("-c,--config", config_path, "scene config JSON")->required();
  synth->add_option("-o,--out", out_dir, "output directory")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "Compare against truth");
  evaluate->add_option("est_dir", est_dir, "estimated pose directory")->required();
  evaluate->add_option("truth_dir", truth_dir, "ground-truth pose directory")
      ->required();
  evaluate->add_option("-o,--out", out_path, "error report JSON")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "Translation-averaging matrix");
  ablate->add_option("graph", graph_path, "view graph JSON")->required();
  ablate->add_option("--truth", truth_dir, "ground-truth pose directory")
      ->required();
  ablate->add_option("-o,--out", out_dir, "output directory")->required();
  ablate->add_option("-c,--config", config_path, "pipeline config JSON");
  ablate->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }

  try {
    if (solve->parsed()) {
      return RunSolve(graph_path, out_dir, config_path, solve->remaining());
    }
    if (synth->parsed()) {
      return RunSynth(config_path, out_dir);
    }
    if (evaluate->parsed()) {
      return RunEvaluate(est_dir, truth_dir, out_path);
    }
    if (ablate->parsed()) {
      return RunAblate(graph_path, truth_dir, out_dir, config_path,
                       ablate->remaining());
    }
  } catch (const PipelineError& err) {
    std::cerr << "error (" << KindName(err.kind()) << ", stage " << err.stage()
              << "): " << err.what() << "\n";
    return ExitCode(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return 4;
  }
  return 4;
}
