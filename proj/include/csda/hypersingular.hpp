#pragma once

#include <functional>
#include <vector>

#include "csda/collision.hpp"
#include "csda/phase_space.hpp"
#include "csda/xsec.hpp"

namespace csda {

/// Hadamard finite part of  int_E^{kappa E} f(E') / (E'-E)^order dE'.
/// The singular part is subtracted analytically and the remainder is handled
/// by adaptive quadrature; f' on the diagonal comes from central differences.
double fp_integral(int order, const std::function<double(double)>& f, double e, double kappa,
                   double tol = 1e-10);

/// Truncated approximations of the two hyper-singular Moller terms:
///   K11: 2 pi ln(kappa E - E) sigma_hat_1(x,E,E) psi
///   K21: the four-term expression with the discrete Laplace-Beltrami matrix
///        for the angular part and the upwind difference for d psi / dE.
void truncated_K11(const PhaseSpaceGrid& grid, const MollerData& data,
                   std::span<const double> psi, std::span<double> out);
void truncated_K21(const PhaseSpaceGrid& grid, const MollerData& data,
                   std::span<const double> psi, std::span<double> out);

struct KappaConsistencyRow {
  double kappa = 0.0;
  double discrepancy = 0.0;  // || K_{1,1,kappa} psi - tilde K_{1,1,kappa} psi ||_inf over samples
};

/// Discrepancy between the exact finite-part operator K_{1,1,kappa} and its
/// truncation, for an analytic test field psi(E) (omega-independent), sampled
/// at the given energies. Oracle side uses fp_integral on the true integrand
/// f1(E') = sigma_hat_1(E',E) * circle integral of psi.
std::vector<KappaConsistencyRow> kappa_consistency_report(
    const std::function<double(double)>& psi_of_e, const std::vector<double>& kappas,
    const std::vector<double>& sample_energies, double e_m);

}  // namespace csda
