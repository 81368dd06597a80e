#include "edfusion/solver.hpp"

#include <cmath>

#include <Eigen/SparseCholesky>

#include "edfusion/error.hpp"

namespace edfusion {

void SolverConfig::validate() const {
  if (!(mu_init > 0.0) || !(mu_up > 1.0) || !(mu_down > 0.0 && mu_down < 1.0) || max_iters < 0 || max_retries < 0)
    throw Error(ErrorCode::InvalidArgument, "solver config requires mu_up > 1 > mu_down > 0 and mu_init > 0");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::ConvergedRel: return "converged_rel";
    case Termination::ConvergedStep: return "converged_step";
    case Termination::MaxIters: return "max_iters";
    case Termination::Stalled: return "stalled";
  }
  return "unknown";
}

bool SolveReport::operator==(const SolveReport& o) const {
  return iterations == o.iterations && rejected_steps == o.rejected_steps && initial_energy == o.initial_energy &&
         final_energy == o.final_energy && terms.rot == o.terms.rot && terms.reg == o.terms.reg &&
         terms.data == o.terms.data && terms.corr == o.terms.corr && reason == o.reason && final_mu == o.final_mu &&
         energy_trace == o.energy_trace;
}

namespace {

SparseMatrix damped(const SparseMatrix& h, double mu) {
  SparseMatrix identity(h.rows(), h.cols());
  identity.setIdentity();
  return h + mu * identity;
}

}  // namespace

VecX lm_step(const SparseMatrix& jacobian, const VecX& residuals, double mu) {
  const SparseMatrix h = SparseMatrix(jacobian.transpose() * jacobian);
  const VecX g = jacobian.transpose() * residuals;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(damped(h, mu));
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "damped normal matrix factorization failed");
  return ldlt.solve(-g);
}

SolveResult lm_solve(const LeastSquaresProblem& problem, const VecX& x0, const SolverConfig& cfg) {
  cfg.validate();
  SolveResult out;
  out.x = x0;
  SolveReport& rep = out.report;

  VecX r;
  SparseMatrix jac;
  problem.evaluate(out.x, r, &jac);
  if (r.size() == 0) throw Error(ErrorCode::NoConstraints, "least-squares problem has no residuals");
  double energy = r.squaredNorm();
  rep.initial_energy = energy;
  rep.energy_trace.push_back(energy);

  double mu = cfg.mu_init;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
  Eigen::Index analyzed_nnz = -1;
  VecX r_trial;
  rep.reason = Termination::MaxIters;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const SparseMatrix h = SparseMatrix(jac.transpose() * jac);
    const VecX g = jac.transpose() * r;

    bool accepted = false;
    bool stop = false;
    int retries = 0;
    while (!accepted && !stop) {
      const SparseMatrix a = damped(h, mu);
      if (a.nonZeros() != analyzed_nnz) {
        ldlt.analyzePattern(a);
        analyzed_nnz = a.nonZeros();
      }
      ldlt.factorize(a);
      if (ldlt.info() != Eigen::Success) {
        if (mu >= cfg.mu_max) throw Error(ErrorCode::SingularSystem, "factorization failed at maximum damping");
        mu = std::min(mu * cfg.mu_up, cfg.mu_max);
        continue;
      }
      const VecX dx = ldlt.solve(-g);
      if (!dx.allFinite()) {
        if (mu >= cfg.mu_max) throw Error(ErrorCode::SingularSystem, "non-finite step at maximum damping");
        mu = std::min(mu * cfg.mu_up, cfg.mu_max);
        continue;
      }
      if (dx.norm() < cfg.step_tol) {
        rep.reason = Termination::ConvergedStep;
        stop = true;
        break;
      }
      const VecX x_trial = out.x + dx;
      problem.evaluate(x_trial, r_trial, nullptr);
      const double e_trial = r_trial.squaredNorm();
      if (std::isfinite(e_trial) && e_trial < energy) {
        const double rel = (energy - e_trial) / std::max(energy, 1e-300);
        out.x = x_trial;
        energy = e_trial;
        mu *= cfg.mu_down;
        ++rep.iterations;
        rep.energy_trace.push_back(energy);
        accepted = true;
        if (rel < cfg.rel_tol) {
          rep.reason = Termination::ConvergedRel;
          stop = true;
        }
      } else {
        ++rep.rejected_steps;
        mu = std::min(mu * cfg.mu_up, cfg.mu_max);
        if (++retries > cfg.max_retries) {
          rep.reason = Termination::Stalled;
          stop = true;
        }
      }
    }
    if (stop) break;
    problem.evaluate(out.x, r, &jac);
  }

  rep.final_energy = energy;
  rep.final_mu = mu;
  return out;
}

}  // namespace edfusion
