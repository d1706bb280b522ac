#pragma once

#include <memory>
#include <optional>

#include "csda/collision.hpp"
#include "csda/phase_space.hpp"
#include "csda/xsec.hpp"

namespace csda {

/// Boundary data per species on the inflow (or outflow) entry list of the
/// grid: value index = entry * n_lev + l.
struct BoundaryField {
  std::array<std::vector<double>, 3> g;

  static BoundaryField zeros(const PhaseSpaceGrid& grid, bool plus_side);
  static BoundaryField constant(const PhaseSpaceGrid& grid, bool plus_side, int species,
                                double value);
  std::vector<double>& operator[](int j) { return g[j]; }
  const std::vector<double>& operator[](int j) const { return g[j]; }
};

/// T^2 inner product over the Gamma- (or Gamma+) entry list:
/// sum entries w(face,node) * wE(l) * a * b.
double t2_inner(const PhaseSpaceGrid& grid, bool plus_side, const BoundaryField& a,
                const BoundaryField& b);
double t2_norm(const PhaseSpaceGrid& grid, bool plus_side, const BoundaryField& a);

/// Coupled transport problem: grids, coefficients per charged species, total
/// cross sections, collision operator, sources and inflow data, direction tag.
struct TransportProblem {
  std::shared_ptr<const PhaseSpaceGrid> grid;
  MollerData data;
  CoefficientField coeff[2];       // electron, positron
  SpeciesSigma sigma;
  CollisionOperator collision;
  bool hypotheses_validated = false;

  // Sources; forward runs read (f, g_minus), adjoint runs read (f, g_plus).
  SpeciesField source;
  BoundaryField g_minus;
  BoundaryField g_plus;
  bool adjoint = false;

  const PhaseSpaceGrid& g() const { return *grid; }
  const CoefficientField& charged_coeff(int j) const { return coeff[j - 1]; }

  double a_of(int j, int v, int l) const { return charged_coeff(j).at_a(v, l); }
  double b_of(int j, int v, int l) const { return charged_coeff(j).at_b(v, l); }
  double sigma_of(int j, int v, int l) const {
    return sigma[j][static_cast<std::size_t>(v) * grid->n_lev() + l];
  }

  /// Runs the hypothesis suite (margins, Schur bounds, kernel positivity);
  /// throws naming the failing assumption. Must pass before solves.
  void validate_hypotheses();

  /// Discrete coercivity constants: c (collision margin) and
  /// c' = min(q1/2, q3/2, q2, 1/2, c).
  double margin_c() const;
  double margin_c_prime() const;
};

/// Convenience assembly of a complete problem with Example-style Moller
/// physics and uniform synthetic coupling kernels.
struct ProblemOptions {
  double sigma0 = 1.0;
  double kappa = 2.0;
  double sigma_margin = 0.5;         // coercivity margin built into Sigma
  double coupling_photon_self = 0.1;     // variety-2 isotropic
  double coupling_photon_electron = 0.2; // variety-1
  double coupling_photon_positron = 0.05;
  double coupling_electron_photon = 0.05;
  double coupling_positron_photon = 0.05;
  bool moller_self_scatter = true;   // variety-3 entries (2,2), (3,3)
  int n_s = 16;
};

TransportProblem make_problem(std::shared_ptr<const PhaseSpaceGrid> grid,
                              const ProblemOptions& opt);

/// Zero-data application of the discrete operator:
///   photons: upwind streaming + Sigma - K
///   charged: energy march term + angular diffusion + streaming + Sigma - K
/// The adjoint application is the exact W-weighted transpose.
struct ApplyOptions {
  bool adjoint = false;
  bool include_collision = true;
  bool include_sigma = true;
  bool differential_only() const { return !include_collision && !include_sigma; }
};

void apply_transport(const TransportProblem& prob, const SpeciesField& x, SpeciesField& y,
                     const ApplyOptions& opt);

/// Boundary/initial ghost contributions carried by the data (the terms that
/// move to the right-hand side in the zero-data formulation).
/// Forward ghosts: g on Gamma-, E_m slice for charged species.
/// Adjoint ghosts: g* on Gamma+, E_0 slice.
struct GhostData {
  const BoundaryField* boundary = nullptr;                    // Gamma-/Gamma+ data
  const std::array<std::vector<double>, 3>* slice = nullptr;  // (vox,node) data, charged
};

/// Accumulates the ghost terms of A_with_data x = A x + ghost_terms(data)
/// into `out` scaled by `scale` (use scale = -1 to build solve right-hand
/// sides: rhs = f - ghost_terms).
void accumulate_ghost_terms(const TransportProblem& prob, bool adjoint, const GhostData& data,
                            double scale, SpeciesField& out);

/// rhs = f - ghost_terms(boundary data) for the zero-data operator.
SpeciesField assemble_rhs(const TransportProblem& prob, bool adjoint);

/// Extract cell-value traces on the Gamma- or Gamma+ entry lists.
BoundaryField cell_trace(const PhaseSpaceGrid& grid, const SpeciesField& x, bool plus_side);

/// W-weighted inner product and norm on species fields.
double species_inner(const TransportProblem& prob, const SpeciesField& a, const SpeciesField& b);
double species_norm(const TransportProblem& prob, const SpeciesField& a);

// Flatten helpers for dense oracles: stacked order (species, vox, node, lvl).
std::vector<double> flatten(const SpeciesField& x);
void unflatten(const PhaseSpaceGrid& grid, std::span<const double> v, SpeciesField& x);

/// Dense matrix of the zero-data operator (tiny grids only).
DenseMatrix dense_operator(const TransportProblem& prob, bool adjoint,
                           const ApplyOptions* opt = nullptr);

/// Dense matrix of the bilinear form  B(psi, v) = v^T (W A) psi.
DenseMatrix dense_bilinear(const TransportProblem& prob, bool adjoint);

}  // namespace csda
