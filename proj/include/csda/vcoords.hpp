#pragma once

#include <functional>

#include "csda/transport_ops.hpp"

namespace csda {

/// v = sqrt(E) * omega; requires E inside (E_0, E_m) interior when checked
/// against a shell.
Vec3 to_velocity(const Vec3& omega, double e);

/// Inverse map (v/|v|, |v|^2); throws when |v| is outside (r_0, r_m).
std::pair<Vec3, double> from_velocity(const Vec3& v, double e_min, double e_max);

/// Product grid of radial shells (interior energy levels) and sphere nodes.
/// The default build applies a fixed rotation so no node lands on the seam
/// half-plane {v2 = 0, v1 >= 0} or near the v3 axis; `matched` skips the
/// rotation to correspond node-for-node with the (omega, E) grid and flags
/// excluded nodes instead.
struct VelocityGrid {
  std::vector<Vec3> nodes;
  std::vector<double> weights;      // shell-volume quadrature weights
  std::vector<int> sphere_node;     // provenance indices
  std::vector<int> energy_level;
  std::vector<bool> excluded;       // seam/axis exclusions (matched grids)
  double r0 = 0.0, rm = 0.0;

  int n_nodes() const { return static_cast<int>(nodes.size()); }
};

VelocityGrid build_velocity_grid(const PhaseSpaceGrid& grid, bool matched);

struct VelocityField {
  std::vector<double> values;  // per velocity node, one species
};

/// Transformed coefficients at a velocity node:
///   a~ = a(x, |v|^2) / (2 |v|^2),  b~ = b(x, |v|^2),  Sigma~ = Sigma(x, |v|^2).
double transform_a(double a, const Vec3& v);
double transform_b(double b, const Vec3& v);
double transform_sigma(double sigma, const Vec3& v);

/// Six-term second-order operator P(x, v, D) of the velocity-coordinate
/// transport equation, evaluated by central differences on a callable.
/// Throws when v1^2 + v2^2 falls below the chart-singularity margin.
double apply_P(const std::function<double(const Vec3&)>& psi, const Vec3& v, double fd_step);

/// Gradient terms v . grad_v and the angular combination P - 2 v . grad_v
/// (which annihilates radial functions).
double velocity_radial_term(const std::function<double(const Vec3&)>& psi, const Vec3& v,
                            double fd_step);

/// || (T psi) o H^{-1} - T~ (psi o H^{-1}) || over interior matched nodes,
/// normalized by the field norm. The sphere-side T is the fully discrete
/// operator; the velocity-side T~ evaluates Eq.-level derivatives from the
/// callable and the transformed curve kernel by shell quadrature.
struct EquivalenceOptions {
  bool include_sigma = true;
  bool include_kernel = true;
  double fd_step_factor = 1e-4;
};

double equivalence_residual(const TransportProblem& prob,
                            const std::function<double(const Vec3&, const Vec3&, double)>& psi,
                            const EquivalenceOptions& opt = {});

}  // namespace csda
