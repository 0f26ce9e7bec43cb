#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <optional>
#include <vector>

namespace rigsfm {

/// Convex problem  min_x,s  sum_r || A_r x_r + s_r b_r - d_r ||_1
/// subject to s_r >= 1 for every term that carries a scale unknown.
/// x_r selects a sparse subset of the global unknown vector.
class AdmmL1Problem {
 public:
  explicit AdmmL1Problem(int num_unknowns) : num_unknowns_(num_unknowns) {}

  /// A: rows x |x_indices|; d: rows; scale_direction (unit-norm, rows) adds
  /// the scalar s >= 1 for this term.
  void AddTerm(const Eigen::MatrixXd& a, const std::vector<int>& x_indices,
               const Eigen::VectorXd& d,
               const std::optional<Eigen::VectorXd>& scale_direction = {});

  int num_unknowns() const { return num_unknowns_; }
  int num_scales() const { return num_scales_; }
  int num_rows() const { return num_rows_; }

  struct Term {
    Eigen::MatrixXd a;
    std::vector<int> x_indices;
    Eigen::VectorXd d;
    std::optional<Eigen::VectorXd> scale_direction;
    int row_offset = 0;
    int scale_index = -1;
  };
  const std::vector<Term>& terms() const { return terms_; }

 private:
  int num_unknowns_;
  int num_scales_ = 0;
  int num_rows_ = 0;
  std::vector<Term> terms_;
};

struct AdmmOptions {
  double rho = 1.0;
  int max_iterations = 1000;
  double primal_tolerance = 1e-8;
  double dual_tolerance = 1e-8;
  /// Warm start for x; empty means zeros. Scales always start at 1.
  Eigen::VectorXd initial_unknowns;
};

struct AdmmResult {
  Eigen::VectorXd x;
  Eigen::VectorXd scales;    // one entry per scale-carrying term, all >= 1
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;    // sum of L1 norms at the returned point
  /// (primal, dual) residual norms per iteration.
  std::vector<std::pair<double, double>> residual_history;
};

/// Scaled-dual ADMM on the splitting e_r = A_r x_r + s_r b_r - d_r with
/// elementwise soft-thresholding, joint sparse normal-equation updates for
/// (x, s), s clamped to [1, inf), and residual-balancing rho adaptation.
/// Throws std::runtime_error naming under-constrained unknowns when the
/// normal equations are singular. Hitting max_iterations returns the best
/// iterate flagged `converged == false`.
AdmmResult SolveAdmmL1(const AdmmL1Problem& problem,
                       const AdmmOptions& options = {});

}  // namespace rigsfm
