#pragma once

#include <string_view>
#include <vector>

#include <Eigen/SparseCore>

#include "edfusion/types.hpp"

namespace edfusion {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// A sum-of-squares objective E(x) = |r(x)|^2.
class LeastSquaresProblem {
 public:
  virtual ~LeastSquaresProblem() = default;
  virtual Eigen::Index num_parameters() const = 0;
  /// Residuals at x; also the Jacobian when `jacobian` is non-null. The
  /// Jacobian sparsity pattern must not depend on x.
  virtual void evaluate(const VecX& x, VecX& residuals, SparseMatrix* jacobian) const = 0;
};

struct SolverConfig {
  double mu_init = 1e-3;
  double mu_up = 10.0;
  double mu_down = 0.5;
  int max_iters = 20;
  double rel_tol = 1e-6;
  double step_tol = 1e-8;
  int max_retries = 10;
  double mu_max = 1e8;

  void validate() const;
};

/// Unweighted energies of the four warp terms.
struct TermEnergies {
  double rot = 0.0;
  double reg = 0.0;
  double data = 0.0;
  double corr = 0.0;
};

enum class Termination { ConvergedRel, ConvergedStep, MaxIters, Stalled };
std::string_view to_string(Termination t);

struct SolveReport {
  int iterations = 0;  // accepted steps
  int rejected_steps = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
  TermEnergies terms;  // filled by callers that know the term split
  Termination reason = Termination::MaxIters;
  double final_mu = 0.0;
  std::vector<double> energy_trace;  // initial energy, then each accepted energy

  bool operator==(const SolveReport&) const;
};

struct SolveResult {
  VecX x;
  SolveReport report;
};

/// Levenberg-Marquardt with plain mu*I damping. Each iteration solves
/// (J^T J + mu I) dx = -J^T r with a sparse LDL^T whose ordering is computed
/// once; a step is kept only if it lowers the energy (mu *= mu_down), else it
/// is retried with mu *= mu_up up to max_retries times. The returned x never
/// has a higher energy than x0. Throws Error(NoConstraints) for an empty
/// residual vector and Error(SingularSystem) if factorization still fails
/// once mu reaches mu_max.
SolveResult lm_solve(const LeastSquaresProblem& problem, const VecX& x0, const SolverConfig& cfg = {});

/// One damped step: solves (J^T J + mu I) dx = -J^T r.
VecX lm_step(const SparseMatrix& jacobian, const VecX& residuals, double mu);

}  // namespace edfusion
