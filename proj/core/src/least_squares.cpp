#include "rigsfm/least_squares.hpp"

#include "rigsfm/so3.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <stdexcept>

namespace rigsfm {

void QuaternionManifold::Plus(const double* x, const double* delta,
                              double* out) const {
  const Rotation current = Rotation::FromQuaternion(
      Eigen::Quaterniond(x[0], x[1], x[2], x[3]));
  const Rotation updated =
      Exp(Eigen::Vector3d(delta[0], delta[1], delta[2])) * current;
  const Eigen::Quaterniond& q = updated.Quaternion();
  out[0] = q.w();
  out[1] = q.x();
  out[2] = q.y();
  out[3] = q.z();
}

const QuaternionManifold& QuaternionManifold::Instance() {
  static const QuaternionManifold manifold;
  return manifold;
}

int LeastSquaresProblem::BlockTangentSize(int block) const {
  const Block& b = blocks_[block];
  return b.manifold ? b.manifold->TangentSize()
                    : static_cast<int>(b.values.size());
}

int LeastSquaresProblem::AddBlock(std::span<const double> values,
                                  const Manifold* manifold) {
  if (manifold && manifold->AmbientSize() != static_cast<int>(values.size())) {
    throw std::invalid_argument("AddBlock: manifold ambient size mismatch");
  }
  Block block;
  block.values.assign(values.begin(), values.end());
  block.manifold = manifold;
  blocks_.push_back(std::move(block));
  return static_cast<int>(blocks_.size()) - 1;
}

void LeastSquaresProblem::SetConstant(int block, bool constant) {
  blocks_[block].constant = constant;
}

void LeastSquaresProblem::AddTerm(std::shared_ptr<const CostTerm> term,
                                  std::vector<int> blocks, RobustKernel kernel) {
  for (int b : blocks) {
    if (b < 0 || b >= NumBlocks()) {
      throw std::invalid_argument("AddTerm: unknown parameter block");
    }
  }
  terms_.push_back({std::move(term), std::move(blocks), kernel});
}

double LeastSquaresProblem::Cost() const {
  double cost = 0.0;
  std::vector<const double*> params;
  Eigen::VectorXd residual;
  for (const Term& term : terms_) {
    params.clear();
    for (int b : term.blocks) params.push_back(blocks_[b].values.data());
    residual.resize(term.cost->ResidualSize());
    term.cost->Evaluate(params, residual, nullptr);
    cost += term.kernel.Cost(residual.squaredNorm());
  }
  return cost;
}

// Shared scratch state for one LevenbergMarquardt() invocation.
struct LmWorkspace {
  LeastSquaresProblem& problem;
  std::vector<int> tangent_offset;  // -1 for constant blocks
  int num_tangent = 0;

  explicit LmWorkspace(LeastSquaresProblem& p) : problem(p) {
    tangent_offset.assign(p.blocks_.size(), -1);
    for (size_t i = 0; i < p.blocks_.size(); ++i) {
      if (p.blocks_[i].constant) continue;
      tangent_offset[i] = num_tangent;
      num_tangent += p.BlockTangentSize(static_cast<int>(i));
    }
  }

  // Robust cost only; +inf when any residual is non-finite.
  double Evaluate() const {
    double cost = 0.0;
    std::vector<const double*> params;
    Eigen::VectorXd residual;
    for (const auto& term : problem.terms_) {
      params.clear();
      for (int b : term.blocks) params.push_back(problem.blocks_[b].values.data());
      residual.resize(term.cost->ResidualSize());
      term.cost->Evaluate(params, residual, nullptr);
      if (!residual.allFinite()) return std::numeric_limits<double>::infinity();
      cost += term.kernel.Cost(residual.squaredNorm());
    }
    return cost;
  }

  // Robustified normal equations at the current values.
  // Returns false when a residual or Jacobian is non-finite.
  bool Linearize(Eigen::SparseMatrix<double>& h, Eigen::VectorXd& g,
                 double& cost) const {
    cost = 0.0;
    g.setZero(num_tangent);
    std::vector<Eigen::Triplet<double>> triplets;

    std::vector<const double*> params;
    std::vector<Eigen::MatrixXd> jac_storage;
    std::vector<Eigen::MatrixXd*> jac_ptrs;
    Eigen::VectorXd residual;

    for (const auto& term : problem.terms_) {
      const int num_blocks = static_cast<int>(term.blocks.size());
      const int res_size = term.cost->ResidualSize();
      params.clear();
      jac_storage.assign(num_blocks, Eigen::MatrixXd());
      jac_ptrs.assign(num_blocks, nullptr);
      for (int k = 0; k < num_blocks; ++k) {
        const int b = term.blocks[k];
        params.push_back(problem.blocks_[b].values.data());
        if (tangent_offset[b] >= 0) {
          jac_storage[k].setZero(res_size, problem.BlockTangentSize(b));
          jac_ptrs[k] = &jac_storage[k];
        }
      }
      residual.resize(res_size);
      term.cost->Evaluate(params, residual, &jac_ptrs);
      if (!residual.allFinite()) return false;

      const double squared = residual.squaredNorm();
      cost += term.kernel.Cost(squared);
      const double w = term.kernel.Weight(squared);

      for (int a = 0; a < num_blocks; ++a) {
        if (!jac_ptrs[a]) continue;
        if (!jac_ptrs[a]->allFinite()) return false;
        const int offset_a = tangent_offset[term.blocks[a]];
        const Eigen::MatrixXd& ja = *jac_ptrs[a];
        g.segment(offset_a, ja.cols()) += w * ja.transpose() * residual;
        for (int b = a; b < num_blocks; ++b) {
          if (!jac_ptrs[b]) continue;
          const int offset_b = tangent_offset[term.blocks[b]];
          const Eigen::MatrixXd& jb = *jac_ptrs[b];
          const Eigen::MatrixXd hab = w * ja.transpose() * jb;
          for (int r = 0; r < hab.rows(); ++r) {
            for (int c = 0; c < hab.cols(); ++c) {
              triplets.emplace_back(offset_a + r, offset_b + c, hab(r, c));
              if (a != b) triplets.emplace_back(offset_b + c, offset_a + r, hab(r, c));
            }
          }
        }
      }
    }
    // Guaranteed diagonal entries for the damping update.
    for (int i = 0; i < num_tangent; ++i) triplets.emplace_back(i, i, 0.0);
    h.resize(num_tangent, num_tangent);
    h.setFromTriplets(triplets.begin(), triplets.end());
    return true;
  }

  void ApplyStep(const Eigen::VectorXd& delta,
                 std::vector<std::vector<double>>& backup) const {
    backup.resize(problem.blocks_.size());
    for (size_t i = 0; i < problem.blocks_.size(); ++i) {
      auto& block = problem.blocks_[i];
      backup[i] = block.values;
      if (tangent_offset[i] < 0) continue;
      const int tangent = problem.BlockTangentSize(static_cast<int>(i));
      const double* d = delta.data() + tangent_offset[i];
      if (block.manifold) {
        block.manifold->Plus(backup[i].data(), d, block.values.data());
      } else {
        for (int k = 0; k < tangent; ++k) block.values[k] += d[k];
      }
    }
  }

  void RestoreStep(const std::vector<std::vector<double>>& backup) const {
    for (size_t i = 0; i < problem.blocks_.size(); ++i) {
      problem.blocks_[i].values = backup[i];
    }
  }
};

LmSummary LevenbergMarquardt(LeastSquaresProblem& problem,
                             const LmOptions& options) {
  constexpr double kDiagonalRegularization = 1e-10;
  LmWorkspace ws(problem);
  LmSummary summary;

  double cost = ws.Evaluate();
  if (!std::isfinite(cost)) {
    throw std::runtime_error("LevenbergMarquardt: non-finite residual at the initial point");
  }
  summary.initial_cost = cost;
  summary.final_cost = cost;
  if (ws.num_tangent == 0) {
    summary.status = SolveStatus::kConvergedGradientTolerance;
    summary.message = "no variable parameter blocks";
    return summary;
  }

  double damping = options.initial_damping;
  Eigen::SparseMatrix<double> h;
  Eigen::VectorXd g;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_analyzed = false;

  for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
    summary.iterations = iteration + 1;
    double linearized_cost = 0.0;
    if (!ws.Linearize(h, g, linearized_cost)) {
      summary.status = SolveStatus::kFailed;
      summary.message = "non-finite residual or Jacobian during linearization";
      return summary;
    }
    cost = linearized_cost;
    summary.final_cost = cost;

    if (g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      summary.status = SolveStatus::kConvergedGradientTolerance;
      return summary;
    }
    if (!pattern_analyzed) {
      ldlt.analyzePattern(h);
      pattern_analyzed = true;
    }

    // Inner damping loop: same linearization, increasing damping until a
    // step is accepted or the damping budget runs out.
    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = h;
      const double diag = damping + kDiagonalRegularization;
      for (int i = 0; i < ws.num_tangent; ++i) damped.coeffRef(i, i) += diag;
      ldlt.factorize(damped);

      bool step_ok = ldlt.info() == Eigen::Success;
      Eigen::VectorXd delta;
      double new_cost = std::numeric_limits<double>::infinity();
      std::vector<std::vector<double>> backup;
      if (step_ok) {
        delta = ldlt.solve(-g);
        step_ok = delta.allFinite();
      }
      if (step_ok) {
        ws.ApplyStep(delta, backup);
        new_cost = ws.Evaluate();
        step_ok = std::isfinite(new_cost) && new_cost < cost;
      }

      if (step_ok) {
        accepted = true;
        damping /= 3.0;
        const double change = cost - new_cost;
        if (options.post_step) {
          options.post_step(problem);
          new_cost = ws.Evaluate();
        }
        summary.final_cost = new_cost;
        if (change < options.function_tolerance * std::max(cost, 1e-300)) {
          summary.status = SolveStatus::kConvergedFunctionTolerance;
          return summary;
        }
        cost = new_cost;
      } else {
        if (!backup.empty()) ws.RestoreStep(backup);
        damping *= 2.0;
        if (damping > options.max_damping) {
          summary.status = SolveStatus::kFailed;
          summary.message = "damping exceeded limit without an acceptable step";
          return summary;
        }
      }
    }
  }
  summary.status = SolveStatus::kMaxIterations;
  return summary;
}

double CheckJacobians(const LeastSquaresProblem& problem, double step,
                      std::vector<double>* per_term) {
  if (per_term) per_term->assign(problem.terms_.size(), 0.0);
  double worst = 0.0;

  std::vector<const double*> params;
  for (size_t t = 0; t < problem.terms_.size(); ++t) {
    const auto& term = problem.terms_[t];
    const int num_blocks = static_cast<int>(term.blocks.size());
    const int res_size = term.cost->ResidualSize();

    params.clear();
    std::vector<Eigen::MatrixXd> analytic(num_blocks);
    std::vector<Eigen::MatrixXd*> jac_ptrs(num_blocks);
    for (int k = 0; k < num_blocks; ++k) {
      const int b = term.blocks[k];
      params.push_back(problem.blocks_[b].values.data());
      analytic[k].setZero(res_size, problem.BlockTangentSize(b));
      jac_ptrs[k] = &analytic[k];
    }
    Eigen::VectorXd residual(res_size);
    term.cost->Evaluate(params, residual, &jac_ptrs);

    double term_worst = 0.0;
    for (int k = 0; k < num_blocks; ++k) {
      const int b = term.blocks[k];
      const auto* manifold = problem.BlockManifold(b);
      const int ambient = problem.BlockAmbientSize(b);
      const int tangent = problem.BlockTangentSize(b);
      const double* x = problem.BlockValues(b);

      std::vector<double> plus(ambient), minus(ambient), delta(tangent, 0.0);
      Eigen::VectorXd r_plus(res_size), r_minus(res_size);
      for (int d = 0; d < tangent; ++d) {
        delta.assign(tangent, 0.0);
        delta[d] = step;
        if (manifold) {
          manifold->Plus(x, delta.data(), plus.data());
        } else {
          for (int a = 0; a < ambient; ++a) plus[a] = x[a] + delta[a];
        }
        delta[d] = -step;
        if (manifold) {
          manifold->Plus(x, delta.data(), minus.data());
        } else {
          for (int a = 0; a < ambient; ++a) minus[a] = x[a] + delta[a];
        }

        params[k] = plus.data();
        term.cost->Evaluate(params, r_plus, nullptr);
        params[k] = minus.data();
        term.cost->Evaluate(params, r_minus, nullptr);
        params[k] = x;

        const Eigen::VectorXd fd = (r_plus - r_minus) / (2.0 * step);
        const double scale = std::max(1.0, analytic[k].col(d).cwiseAbs().maxCoeff());
        const double discrepancy =
            (fd - analytic[k].col(d)).cwiseAbs().maxCoeff() / scale;
        term_worst = std::max(term_worst, discrepancy);
      }
    }
    if (per_term) (*per_term)[t] = term_worst;
    worst = std::max(worst, term_worst);
  }
  return worst;
}

}  // namespace rigsfm
