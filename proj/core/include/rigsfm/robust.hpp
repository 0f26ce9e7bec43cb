#pragma once

#include <cmath>

namespace rigsfm {

enum class KernelKind { kNone, kHuber, kCauchy };

/// Robust loss on the squared residual norm s = ||r||^2. Weight() is the
/// IRLS weight rho'(s); Cost() is rho(s) itself.
struct RobustKernel {
  KernelKind kind = KernelKind::kNone;
  double scale = 1.0;

  static RobustKernel None() { return {KernelKind::kNone, 1.0}; }
  static RobustKernel Huber(double scale) { return {KernelKind::kHuber, scale}; }
  static RobustKernel Cauchy(double scale) { return {KernelKind::kCauchy, scale}; }

  double Weight(double squared_norm) const {
    switch (kind) {
      case KernelKind::kHuber: {
        const double norm = std::sqrt(squared_norm);
        return norm <= scale ? 1.0 : scale / norm;
      }
      case KernelKind::kCauchy:
        return 1.0 / (1.0 + squared_norm / (scale * scale));
      case KernelKind::kNone:
        break;
    }
    return 1.0;
  }

  double Cost(double squared_norm) const {
    switch (kind) {
      case KernelKind::kHuber: {
        const double norm = std::sqrt(squared_norm);
        return norm <= scale ? squared_norm : 2.0 * scale * norm - scale * scale;
      }
      case KernelKind::kCauchy:
        return scale * scale * std::log1p(squared_norm / (scale * scale));
      case KernelKind::kNone:
        break;
    }
    return squared_norm;
  }
};

}  // namespace rigsfm
