#include "rigsfm/admm.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rigsfm {
namespace {

constexpr int kRhoAdaptationWindow = 100;

double SoftThreshold(double v, double k) {
  if (v > k) return v - k;
  if (v < -k) return v + k;
  return 0.0;
}

}  // namespace

void AdmmL1Problem::AddTerm(const Eigen::MatrixXd& a,
                            const std::vector<int>& x_indices,
                            const Eigen::VectorXd& d,
                            const std::optional<Eigen::VectorXd>& scale_direction) {
  if (a.cols() != static_cast<int>(x_indices.size()) || a.rows() != d.size()) {
    throw std::invalid_argument("AdmmL1Problem::AddTerm: dimension mismatch");
  }
  for (int idx : x_indices) {
    if (idx < 0 || idx >= num_unknowns_) {
      throw std::invalid_argument("AdmmL1Problem::AddTerm: unknown index");
    }
  }
  if (scale_direction && scale_direction->size() != a.rows()) {
    throw std::invalid_argument("AdmmL1Problem::AddTerm: scale direction size");
  }
  Term term{a, x_indices, d, scale_direction, num_rows_, -1};
  if (scale_direction) {
    term.scale_index = num_scales_;
    ++num_scales_;
  }
  num_rows_ += static_cast<int>(a.rows());
  terms_.push_back(std::move(term));
}

// Splitting with one auxiliary block per constraint family:
//   e     = G z - d       (L1-penalized rows)
//   sigma = S z           (scale rows, projected onto [1, inf))
// so both prox steps are exact and the z-update is one cached sparse
// Cholesky solve of (G^T G + S^T S + reg).
AdmmResult SolveAdmmL1(const AdmmL1Problem& problem, const AdmmOptions& options) {
  const int nx = problem.num_unknowns();
  const int ns = problem.num_scales();
  const int nz = nx + ns;
  const int rows = problem.num_rows();

  Eigen::SparseMatrix<double> g(rows, nz);
  Eigen::VectorXd d(rows);
  {
    std::vector<Eigen::Triplet<double>> triplets;
    for (const auto& term : problem.terms()) {
      for (int r = 0; r < term.a.rows(); ++r) {
        for (int c = 0; c < term.a.cols(); ++c) {
          if (term.a(r, c) != 0.0) {
            triplets.emplace_back(term.row_offset + r, term.x_indices[c],
                                  term.a(r, c));
          }
        }
        if (term.scale_index >= 0) {
          triplets.emplace_back(term.row_offset + r, nx + term.scale_index,
                                (*term.scale_direction)(r));
        }
      }
      d.segment(term.row_offset, term.d.size()) = term.d;
    }
    g.setFromTriplets(triplets.begin(), triplets.end());
  }

  Eigen::SparseMatrix<double> normal = Eigen::SparseMatrix<double>(g.transpose()) * g;
  {
    std::ostringstream unconstrained;
    int count = 0;
    for (int c = 0; c < nz; ++c) {
      if (normal.coeff(c, c) < 1e-12) {
        unconstrained << (count++ ? ", " : "") << (c < nx ? "x" : "s")
                      << (c < nx ? c : c - nx);
      }
    }
    if (count > 0) {
      throw std::runtime_error(
          "SolveAdmmL1: singular normal equations; under-constrained variables: " +
          unconstrained.str());
    }
  }
  // S^T S adds one to each scale diagonal entry.
  for (int k = 0; k < ns; ++k) normal.coeffRef(nx + k, nx + k) += 1.0;
  for (int c = 0; c < nz; ++c) normal.coeffRef(c, c) += 1e-10;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(normal);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < 1e-12) {
    throw std::runtime_error(
        "SolveAdmmL1: singular normal equations (rank-deficient constraint set)");
  }

  double rho = options.rho;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(nz);
  if (options.initial_unknowns.size() == nx) {
    z.head(nx) = options.initial_unknowns;
  } else if (options.initial_unknowns.size() != 0) {
    throw std::invalid_argument("SolveAdmmL1: initial_unknowns size mismatch");
  }
  z.tail(ns).setOnes();  // scales start on the constraint boundary

  Eigen::VectorXd gz = g * z;
  Eigen::VectorXd e = gz - d;
  Eigen::VectorXd sigma = z.tail(ns);
  Eigen::VectorXd u_e = Eigen::VectorXd::Zero(rows);
  Eigen::VectorXd u_s = Eigen::VectorXd::Zero(ns);

  AdmmResult result;
  result.x = z.head(nx);
  result.scales = sigma;
  result.objective = (gz - d).lpNorm<1>();

  // Track the best feasible iterate (x with the projected scales).
  Eigen::VectorXd z_feasible = z;
  const auto track_best = [&]() {
    z_feasible.head(nx) = z.head(nx);
    z_feasible.tail(ns) = sigma;
    const double objective = (g * z_feasible - d).lpNorm<1>();
    if (objective < result.objective) {
      result.objective = objective;
      result.x = z_feasible.head(nx);
      result.scales = sigma;
    }
  };

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    // z-update.
    Eigen::VectorXd rhs = g.transpose() * (d + e - u_e);
    rhs.tail(ns) += sigma - u_s;
    z = ldlt.solve(rhs);
    gz = g * z;

    // Prox steps: soft-thresholding for the L1 rows, projection for scales.
    const Eigen::VectorXd e_prev = e;
    const Eigen::VectorXd sigma_prev = sigma;
    const Eigen::VectorXd v = gz - d + u_e;
    for (int r = 0; r < rows; ++r) e(r) = SoftThreshold(v(r), 1.0 / rho);
    for (int k = 0; k < ns; ++k) sigma(k) = std::max(1.0, z(nx + k) + u_s(k));

    // Dual ascent on the scaled multipliers.
    const Eigen::VectorXd primal_e = gz - d - e;
    const Eigen::VectorXd primal_s = z.tail(ns) - sigma;
    u_e += primal_e;
    u_s += primal_s;

    const double primal_norm =
        std::sqrt(primal_e.squaredNorm() + primal_s.squaredNorm());
    Eigen::VectorXd dual = g.transpose() * (e - e_prev);
    dual.tail(ns) += sigma - sigma_prev;
    const double dual_norm = rho * dual.norm();
    result.residual_history.emplace_back(primal_norm, dual_norm);
    track_best();

    if (primal_norm < options.primal_tolerance &&
        dual_norm < options.dual_tolerance) {
      result.converged = true;
      ++it;
      break;
    }

    // Residual balancing keeps the two norms within a factor of 10. The
    // adaptation is frozen after a warm-up window: fixed-rho iterations are
    // what carries the convergence guarantee, and continual rescaling can
    // sustain a limit cycle near the solution.
    if (it < kRhoAdaptationWindow) {
      if (primal_norm > 10.0 * dual_norm) {
        rho *= 2.0;
        u_e /= 2.0;
        u_s /= 2.0;
      } else if (dual_norm > 10.0 * primal_norm) {
        rho /= 2.0;
        u_e *= 2.0;
        u_s *= 2.0;
      }
    }
  }
  result.iterations = it;
  return result;
}

}  // namespace rigsfm
