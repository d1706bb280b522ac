#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "csda/phase_space.hpp"

namespace csda {

// Species indices throughout: 0 = photon, 1 = electron, 2 = positron.
inline constexpr int kPhoton = 0;
inline constexpr int kElectron = 1;
inline constexpr int kPositron = 2;

/// Scattering cosine mu(E', E) for inelastic electron-electron collisions.
double moller_mu(double e_prime, double e);

/// d mu / dE' evaluated on the diagonal E' = E:  -1 / (E (E + 2)).
double dmu_dEp_diag(double e);

/// Closed-form differential cross sections sigma_hat_{0,1,2}(E', E) with the
/// voxel factor sigma0 pulled out (pass sigma0 = 1 for the unit shapes).
double sigma_hat(int order, double sigma0, double e_prime, double e);

/// d sigma_hat_2 / dE' on the diagonal E' = E.
double dsigma2_dEp_diag(double sigma0, double e);

/// Per-voxel cross-section scale and truncation parameter.
struct MollerData {
  std::vector<double> sigma0;       // per active voxel, >= q0 > 0
  double kappa = 2.0;
  std::vector<double> base_sigma;   // optional extra Sigma(x,E) term, (vox,lvl) or empty

  double q0 = 0.0;                  // min sigma0, computed on validate
  void validate(const SpatialGrid& spatial, const EnergyGrid& energy) const;

  static MollerData constant(const SpatialGrid& spatial, double sigma0, double kappa);
};

struct CoefficientMargins {
  double q1 = 0.0;  // min of -da/dE (discrete differences)
  double q2 = 0.0;  // min of -b
  double q3 = 0.0;  // min of -a at both energy endpoints
  double c0 = 0.0;  // min of |a|
};

/// Energy advection and angular diffusion coefficients a = -S_kappa, b, plus
/// the kappa-truncation part of the total cross section, for one charged
/// species. Margins are discrete minima and must all be positive.
struct CoefficientField {
  int n_vox = 0, n_lev = 0;
  std::vector<double> a;        // (vox, lvl)
  std::vector<double> b;        // (vox, lvl)
  std::vector<double> dadE;     // discrete dA/dE, (vox, lvl); dadE(.,0) copies level 1
  std::vector<double> sigma_core;  // kappa-truncation terms of Sigma_kappa, (vox, lvl)
  CoefficientMargins margins;

  double at_a(int v, int l) const { return a[static_cast<std::size_t>(v) * n_lev + l]; }
  double at_b(int v, int l) const { return b[static_cast<std::size_t>(v) * n_lev + l]; }
};

CoefficientField build_coefficients(const MollerData& data, const SpatialGrid& spatial,
                                    const EnergyGrid& grid);

/// Tabulated restricted kernel sigma_hat_{r,kappa}(x, E', E) =
/// sigma0(x) * table(E', E), with Schur row/column bounds.
struct RestrictedKernel {
  int n_lev = 0;
  double kappa = 0.0;
  std::vector<double> table;     // (lp, l) with sigma0 = 1; zero for E' <= E
  std::vector<double> row_unit;  // per l: sum_lp table(lp, l) wE(lp)
  std::vector<double> col_unit;  // per l: sum_lp table(l, lp) wE(lp)
  double m1 = 0.0, m2 = 0.0;     // include max sigma0
  double sigma0_max = 0.0;

  double at(int lp, int l) const { return table[static_cast<std::size_t>(lp) * n_lev + l]; }
};

RestrictedKernel build_restricted_kernel(const MollerData& data, const EnergyGrid& grid);

/// Optionally load sigma_hat tables from a delimited text file with columns
/// (E', E, s0, s1, s2); returns per-order evaluators on the grid nodes.
struct SigmaHatTable {
  int n_lev = 0;
  std::vector<double> s0, s1, s2;  // (lp, l)
};
SigmaHatTable load_sigma_hat_table(const std::string& path, const EnergyGrid& grid);

enum class KernelVariety : std::uint8_t { None, Full, EnergyLocal, Curve };

/// Separable nonnegative kernel factors for the Full / EnergyLocal varieties:
///   Full:        sigma(x,w',w,E',E) = scale * u(w') p(E') q(w) r(E)
///   EnergyLocal: sigma(x,w',w,E)    = scale * u(w') q(w) r(E)
struct SeparableKernel {
  double scale = 0.0;
  std::vector<double> u, p, q, r;
};

struct KernelEntry {
  KernelVariety variety = KernelVariety::None;
  SeparableKernel sep;                  // Full / EnergyLocal
  std::shared_ptr<const RestrictedKernel> curve;  // Curve (sigma0-scaled Moller family)
};

/// The 3x3 coupling table sigma_{k -> j}; entry(k, j) feeds species j from
/// species k. Aggregate Schur bounds and margins are computed discretely.
struct CoupledKernelSet {
  std::array<KernelEntry, 9> entries;
  double m1 = 0.0, m2 = 0.0;
  bool validated = false;

  KernelEntry& entry(int k, int j) { return entries[k * 3 + j]; }
  const KernelEntry& entry(int k, int j) const { return entries[k * 3 + j]; }

  /// Row sums sum_k integral of sigma_{kj} at (j, x, n, l), curve terms carry
  /// their 2*pi circle factor. Used by margins, Sigma construction, bounds.
  double row_sum(int j, int vox, int node, int lev, const PhaseSpaceGrid& grid,
                 const MollerData& data) const;
  double col_sum(int j, int vox, int node, int lev, const PhaseSpaceGrid& grid,
                 const MollerData& data) const;

  void validate(const PhaseSpaceGrid& grid, const MollerData& data);
};

/// Isotropic uniform-in-energy separable kernel with unit row and column
/// integrals, scaled by `magnitude`.
SeparableKernel make_uniform_separable(double magnitude, const PhaseSpaceGrid& grid,
                                       KernelVariety variety);

/// Per-species total cross sections on (vox, lvl).
using SpeciesSigma = std::array<std::vector<double>, 3>;

/// Smallest margin min_j min_{x,w,E} of both Sigma_j - row and Sigma_j - col.
/// Negative return signals hypothesis failure; callers decide.
double coercivity_margin(const CoupledKernelSet& set, const SpeciesSigma& sigma,
                         const PhaseSpaceGrid& grid, const MollerData& data);
double coercivity_margin(const RestrictedKernel& kernel, std::span<const double> sigma,
                         const PhaseSpaceGrid& grid, const MollerData& data);

/// Builds Sigma_j = (charged kappa-truncation core) + max(row, col) kernel
/// sums + margin, which satisfies the coercivity hypotheses by construction.
SpeciesSigma build_default_sigma(const CoupledKernelSet& set,
                                 const std::array<const CoefficientField*, 3>& coeffs,
                                 const PhaseSpaceGrid& grid, const MollerData& data,
                                 double margin);

}  // namespace csda
