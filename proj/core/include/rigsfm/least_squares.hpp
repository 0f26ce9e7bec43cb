#pragma once

#include "rigsfm/robust.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rigsfm {

/// Local parameterization of a parameter block: the solver works with
/// `TangentSize()`-dimensional increments applied through Plus().
class Manifold {
 public:
  virtual ~Manifold() = default;
  virtual int AmbientSize() const = 0;
  virtual int TangentSize() const = 0;
  virtual void Plus(const double* x, const double* delta, double* out) const = 0;
};

/// Unit quaternion (w, x, y, z) updated as q <- exp(delta) * q, delta a
/// 3-vector in the rotation tangent space.
class QuaternionManifold final : public Manifold {
 public:
  int AmbientSize() const override { return 4; }
  int TangentSize() const override { return 3; }
  void Plus(const double* x, const double* delta, double* out) const override;

  static const QuaternionManifold& Instance();
};

/// A residual term. Jacobians, when requested, are with respect to the
/// tangent-space increment of each referenced block (ResidualSize() rows by
/// TangentSize() columns); entries for blocks the solver holds constant are
/// passed as nullptr and may be skipped.
class CostTerm {
 public:
  virtual ~CostTerm() = default;
  virtual int ResidualSize() const = 0;
  virtual void Evaluate(const std::vector<const double*>& params,
                        Eigen::VectorXd& residual,
                        const std::vector<Eigen::MatrixXd*>* jacobians) const = 0;
};

/// Sparse robustified nonlinear least-squares problem: parameter blocks
/// (optionally manifold-valued, optionally constant) plus residual terms.
class LeastSquaresProblem {
 public:
  int AddBlock(std::span<const double> values, const Manifold* manifold = nullptr);
  void SetConstant(int block, bool constant = true);
  bool IsConstant(int block) const { return blocks_[block].constant; }

  void AddTerm(std::shared_ptr<const CostTerm> term, std::vector<int> blocks,
               RobustKernel kernel = RobustKernel::None());

  double* BlockValues(int block) { return blocks_[block].values.data(); }
  const double* BlockValues(int block) const { return blocks_[block].values.data(); }
  int BlockAmbientSize(int block) const {
    return static_cast<int>(blocks_[block].values.size());
  }
  int BlockTangentSize(int block) const;
  const Manifold* BlockManifold(int block) const { return blocks_[block].manifold; }

  int NumBlocks() const { return static_cast<int>(blocks_.size()); }
  int NumTerms() const { return static_cast<int>(terms_.size()); }

  /// Robust cost at the current values: sum of rho(||r||^2) over terms.
  double Cost() const;

 private:
  struct Block {
    std::vector<double> values;
    const Manifold* manifold = nullptr;  // nullptr: Euclidean
    bool constant = false;
  };
  struct Term {
    std::shared_ptr<const CostTerm> cost;
    std::vector<int> blocks;
    RobustKernel kernel;
  };

  std::vector<Block> blocks_;
  std::vector<Term> terms_;

  friend struct LmWorkspace;
  friend double CheckJacobians(const LeastSquaresProblem&, double,
                               std::vector<double>*);
};

enum class SolveStatus {
  kConvergedFunctionTolerance,
  kConvergedGradientTolerance,
  kMaxIterations,
  kFailed,
};

inline bool Converged(SolveStatus s) {
  return s == SolveStatus::kConvergedFunctionTolerance ||
         s == SolveStatus::kConvergedGradientTolerance;
}

struct LmOptions {
  int max_iterations = 100;
  double function_tolerance = 1e-12;
  double gradient_tolerance = 1e-10;
  double initial_damping = 1e-4;
  double max_damping = 1e32;
  /// Invoked after every accepted step; may project parameter values (for
  /// simple bound constraints such as nonnegative auxiliary variables).
  std::function<void(LeastSquaresProblem&)> post_step;
};

struct LmSummary {
  SolveStatus status = SolveStatus::kFailed;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::string message;
};

/// Levenberg-Marquardt with identity damping: rejected steps double the
/// damping, accepted steps reduce it by 1/3. Normal equations are solved by
/// sparse Cholesky with a 1e-10 diagonal regularizer, so gauge
/// rank-deficiency is tolerated without explicit constraints.
/// Throws std::runtime_error when the initial residual is non-finite.
LmSummary LevenbergMarquardt(LeastSquaresProblem& problem,
                             const LmOptions& options = {});

/// Central-difference validation of every analytic Jacobian. Returns the
/// maximum relative discrepancy; per-term maxima are written to `per_term`
/// when provided.
double CheckJacobians(const LeastSquaresProblem& problem, double step = 1e-6,
                      std::vector<double>* per_term = nullptr);

}  // namespace rigsfm
