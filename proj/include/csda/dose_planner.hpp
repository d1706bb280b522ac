#pragma once

#include "csda/solver.hpp"

namespace csda {

/// Total stopping powers per species on (vox, lvl); nonnegative and bounded.
struct StoppingPowers {
  std::array<std::vector<double>, 3> s;

  static StoppingPowers constant(const PhaseSpaceGrid& grid, std::array<double, 3> values);
  double at(int j, int v, int l, int n_lev) const {
    return s[j][static_cast<std::size_t>(v) * n_lev + l];
  }
};

/// D(x) = sum_j int int s_j(x,E) psi_j(x,w,E) dw dE, per active voxel.
std::vector<double> dose(const PhaseSpaceGrid& grid, const SpeciesField& psi,
                         const StoppingPowers& sp);

/// D* d = (s_1 d, s_2 d, s_3 d).
void dose_adjoint(const PhaseSpaceGrid& grid, const StoppingPowers& sp,
                  std::span<const double> d, SpeciesField& out);

/// Region masks, dose levels, dose-volume parameters and objective weights.
struct Prescription {
  double d0 = 1.0;       // prescribed target dose
  double d_crit = 0.5;   // allowed upper bound in the critical region
  double d_norm = 0.7;   // allowed upper bound in normal tissue
  // Initializer target fields (constants restricted to the masks).
  double target_t = 1.0, target_c = 0.0, target_n = 0.0;
  double dv_level = 0.5;     // d_C
  double dv_fraction = 0.3;  // v_C
  double eps = 0.01;         // sigmoid width for the smoothed Heaviside
  double c_t = 1.0, c_c = 1.0, c_n = 1.0;
  double c_dv = 0.0, c_ad = 0.0, c_sc = 1.0;

  void validate() const;
};

enum class ControlMode : std::uint8_t { External, Internal, LinearUnconstrained };

struct ObjectiveBreakdown {
  double j_t = 0.0, j_c = 0.0, j_n = 0.0, j_dv = 0.0, j_ad = 0.0, j_sc = 0.0;
  double total = 0.0;
};

struct KktReport {
  double stationarity = 0.0;    // norm of the negative part of J'(control)
  double complementarity = 0.0; // |<control, J'(control)/2>|
  double primal = 0.0;          // norm of the control's negative part
};

struct PlanState {
  ControlMode mode = ControlMode::External;
  BoundaryField g;       // external / linear control
  SpeciesField f;        // internal control
  SpeciesField psi, psi_star;
  std::vector<double> dose_field;
  ObjectiveBreakdown objective;
  KktReport kkt;
  std::vector<double> step_history;
  int iterations = 0;
  bool converged = false;
};

/// Smoothed Heaviside 1 / (1 + exp(-t/eps)).
double smooth_heaviside(double t, double eps);

/// Exact-Heaviside volume fraction of `region` with dose >= level.
double dvh_fraction(const SpatialGrid& spatial, std::span<const double> dose_field,
                    Region region, double level);

/// Clinical objective with negative-part penalties, the smoothed dose-volume
/// term, admissibility penalty and stabilizer.
ObjectiveBreakdown objective_full(const TransportProblem& prob, const Prescription& rx,
                                  std::span<const double> dose_field, const PlanState& plan);

/// Initializer objective: plain L2 misfits to the target fields plus the
/// quadratic stabilizer (strictly convex).
ObjectiveBreakdown objective_initializer(const TransportProblem& prob, const Prescription& rx,
                                         std::span<const double> dose_field,
                                         const PlanState& plan);

/// Adjoint right-hand side  f* = sum_R c_R D* e_R (D psi - d_R)  of the
/// initializer objective.
SpeciesField initializer_fstar(const TransportProblem& prob, const Prescription& rx,
                               const StoppingPowers& sp, std::span<const double> dose_field);

/// J'(g) on Gamma-:  -2 gamma_-(psi*) + 2 c_sc g, with psi* solved from the
/// adjoint problem with source -f*. Also returns psi and psi* via the plan.
BoundaryField gradient_external(TransportProblem& prob, const Prescription& rx,
                                const StoppingPowers& sp, const BoundaryField& g,
                                PlanState* plan = nullptr, const SolverOptions& sopt = {});

/// J'(f) = -2 psi* + 2 c_sc f for the internal initializer objective.
SpeciesField gradient_internal(TransportProblem& prob, const Prescription& rx,
                               const StoppingPowers& sp, const SpeciesField& f,
                               PlanState* plan = nullptr, const SolverOptions& sopt = {});

struct FixedPointOptions {
  double theta = 0.5;
  double tol = 1e-10;
  int max_iter = 200;
  SolverOptions solver;
};

PlanState optimize_external(TransportProblem& prob, const Prescription& rx,
                            const StoppingPowers& sp, const FixedPointOptions& opt = {});
PlanState optimize_internal(TransportProblem& prob, const Prescription& rx,
                            const StoppingPowers& sp, const FixedPointOptions& opt = {});
PlanState optimize_linear_unconstrained(TransportProblem& prob, const Prescription& rx,
                                        const StoppingPowers& sp,
                                        const FixedPointOptions& opt = {});

KktReport kkt_residuals(TransportProblem& prob, const Prescription& rx, const StoppingPowers& sp,
                        PlanState& plan, const SolverOptions& sopt = {});

/// Monolithic dense solve of the coupled linear optimality system of the
/// unconstrained variant (tiny grids); oracle for the fixed point.
std::pair<SpeciesField, SpeciesField> dense_linear_optimality(const TransportProblem& prob,
                                                              const Prescription& rx,
                                                              const StoppingPowers& sp);

/// Half-gradient of the clinical objective with respect to dose, per voxel:
/// quadratic target misfit, positive-part overdose penalties, and the
/// smoothed dose-volume chain.
std::vector<double> full_objective_dose_residual(const TransportProblem& prob,
                                                 const Prescription& rx,
                                                 std::span<const double> dose_field);

/// J'(g) of the full objective for the external control, via one adjoint
/// solve; adds the admissibility-penalty and stabilizer terms.
BoundaryField gradient_external_full(TransportProblem& prob, const Prescription& rx,
                                     const StoppingPowers& sp, const BoundaryField& g,
                                     PlanState* plan = nullptr, const SolverOptions& sopt = {});

struct RefineOptions {
  double step0 = 1.0;
  int max_iter = 20;
  int max_backtracks = 30;
  double tol = 1e-10;
  SolverOptions solver;
};

/// Projected-gradient refinement of the full objective, warm-started from an
/// initializer plan (external control, g >= 0 kept by projection).
PlanState refine_full_objective(TransportProblem& prob, const Prescription& rx,
                                const StoppingPowers& sp, PlanState start,
                                const RefineOptions& opt = {});

}  // namespace csda
