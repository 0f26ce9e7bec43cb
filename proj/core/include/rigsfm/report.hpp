#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace rigsfm {

/// Machine-readable per-stage record: objective before/after, iteration
/// count, convergence flag, plus free-form counters (dropped tracks and the
/// like).
struct StageReport {
  std::string stage;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int iterations = 0;
  bool converged = true;
  std::map<std::string, std::int64_t> counters;
};

std::string StageReportJson(const StageReport& report);

}  // namespace rigsfm
