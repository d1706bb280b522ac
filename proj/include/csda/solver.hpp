#pragma once

#include <utility>

#include "csda/forms.hpp"
#include "csda/transport_ops.hpp"

namespace csda {

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  std::array<double, 3> flux_norms{};
  double outflow_norm = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> residual_history;
  // Charged-species inflow data nonzero at the initial energy slice: the
  // solution cannot be continuous up to the boundary there. Solved anyway.
  bool compatibility_warning = false;
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 500;
  int inner_max_iter = 2000;
  double inner_tol_factor = 1e-2;
  bool throw_on_failure = true;
};

struct SolveFailure : std::runtime_error {
  SolveFailure(const std::string& what, SolveReport rep)
      : std::runtime_error(what), report(std::move(rep)) {}
  SolveReport report;
};

/// Source iteration on the collision coupling. Inner solves: photons by
/// per-direction triangular sweeps; charged species by an implicit march
/// from E_m down with a diagonally preconditioned Krylov solve per level.
std::pair<SpeciesField, SolveReport> solve_forward(const TransportProblem& prob,
                                                   const SolverOptions& opt = {});

/// Sign-flipped system: streaming along -omega, march from E_0 up, data on
/// Gamma+, adjoint coupling. Exactly the W-transpose of the forward system.
std::pair<SpeciesField, SolveReport> solve_adjoint(const TransportProblem& prob,
                                                   const SolverOptions& opt = {});

/// ||psi||_H / (||f|| + ||g||_{T2(Gamma-)}); zero data returns 0 with flag.
double apriori_ratio(const TransportProblem& prob, const SpeciesField& psi,
                     const SpeciesField& f, const BoundaryField& g, bool* zero_data = nullptr);

/// Monolithic dense solve of the same zero-data system (tiny grids), for
/// oracle comparisons: solves A x = f - ghost_terms(data).
SpeciesField dense_solve(const TransportProblem& prob, bool adjoint);

}  // namespace csda
