#pragma once

#include "csda/transport_ops.hpp"

namespace csda {

/// A species field together with its boundary traces and energy endpoint
/// slices. Traces left empty are derived from cell values; solver outputs
/// store the data side (inflow trace, homogeneous initial slice) explicitly.
struct DiscreteField {
  SpeciesField values;
  BoundaryField gamma_minus;  // empty => cell values
  BoundaryField gamma_plus;   // empty => cell values
  std::array<std::vector<double>, 3> slice_em;  // (vox,node); empty => level-0 values
  std::array<std::vector<double>, 3> slice_e0;  // (vox,node); empty => last-level values

  static DiscreteField from_values(const PhaseSpaceGrid& grid, SpeciesField v);
  static DiscreteField from_forward_solution(const PhaseSpaceGrid& grid, SpeciesField psi,
                                             const BoundaryField& g_minus);
  static DiscreteField from_adjoint_solution(const PhaseSpaceGrid& grid, SpeciesField psi_star,
                                             const BoundaryField& g_plus);

  BoundaryField trace_minus(const PhaseSpaceGrid& grid) const;
  BoundaryField trace_plus(const PhaseSpaceGrid& grid) const;
  std::vector<double> endpoint_em(const PhaseSpaceGrid& grid, int species) const;
  std::vector<double> endpoint_e0(const PhaseSpaceGrid& grid, int species) const;
};

/// Norm of the solution space: L2 + T2(Gamma) + energy endpoint slices +
/// L2(G x I, H1(S)); the photon component carries L2 + T2 only.
double norm_H(const TransportProblem& prob, const DiscreteField& field);

/// Test-space norm: adds the streaming and (charged) dE/dE seminorms,
/// realized with the solver's zero-data stencils.
double norm_Hhat(const TransportProblem& prob, const DiscreteField& field);

/// Assembled weak system: B(psi, v) = v^T W A psi with the per-term
/// breakdown of the summation-by-parts split available for diagnostics.
struct FormBreakdown {
  double energy_transposed = 0.0;   // -<psi, d(av)/dE-type term>
  double endpoint_e0 = 0.0;         // E_0 endpoint product (discrete weight)
  double streaming_transposed = 0.0;
  double gamma_plus = 0.0;          // outflow boundary product
  double angular = 0.0;             // -<grad_S psi, b grad_S v>
  double sigma_minus_k = 0.0;
  double total() const {
    return energy_transposed + endpoint_e0 + streaming_transposed + gamma_plus + angular +
           sigma_minus_k;
  }
};

class AssembledSystem {
 public:
  AssembledSystem(const TransportProblem& prob, bool adjoint);

  double bilinear(const SpeciesField& psi, const SpeciesField& v) const;
  FormBreakdown breakdown(const SpeciesField& psi, const SpeciesField& v) const;
  void apply(const SpeciesField& x, SpeciesField& y) const;  // y = A x (zero data)
  DenseMatrix dense() const;                                 // W A, tiny grids
  bool adjoint() const { return adjoint_; }

 private:
  const TransportProblem* prob_;
  bool adjoint_;
};

AssembledSystem assemble_forward(const TransportProblem& prob);
AssembledSystem assemble_adjoint(const TransportProblem& prob);

/// F(v) = <f, v> + <g, gamma_-(v)>; the adjoint functional pairs on Gamma+.
struct LinearFunctional {
  const TransportProblem* prob;
  bool adjoint;
  SpeciesField f;
  BoundaryField g;

  double operator()(const DiscreteField& v) const;
  double operator()(const SpeciesField& v) const;  // traces from cell values
};

LinearFunctional functional_F(const TransportProblem& prob, SpeciesField f,
                              BoundaryField g_minus);
LinearFunctional functional_Fstar(const TransportProblem& prob, SpeciesField f_star,
                                  BoundaryField g_plus);

/// | <P psi, psi*> - <psi, P* psi*> - boundary term - a-weighted endpoint
/// terms |, with P applied using each field's own ghost data. Exactly zero
/// for solver output pairs; first order for smooth manufactured pairs.
double green_residual(const TransportProblem& prob, const DiscreteField& psi,
                      const DiscreteField& psi_star);

/// Writes the nonzeros of the assembled form in coordinate text format
/// (row <tab> col <tab> value), zero-based indices. Tiny grids only.
void export_coordinate_text(const AssembledSystem& sys, const std::string& path,
                            double drop_tol = 0.0);

}  // namespace csda
