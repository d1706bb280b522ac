#pragma once

#include <array>
#include <vector>

#include "csda/phase_space.hpp"
#include "csda/xsec.hpp"

namespace csda {

/// Orthogonal frame R(omega) with R e3 = omega; Rodrigues rotation about
/// e3 x omega, with the antipode fixed as diag(1, -1, -1).
struct RotationFrame {
  std::array<double, 9> m{};  // row-major
  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
};

RotationFrame rotation_to(const Vec3& omega);

/// Point on the scattering cone { w' : w'.w = mu(E', E) } at parameter s.
Vec3 curve_point(double e_prime, double e, const Vec3& omega, double s);

/// Precomputed barycentric stencils for psi(x, gamma(E',E,w)(s), E') at the
/// trapezoid s-samples; entries exist for level pairs with E' >= E.
struct CurvePlan {
  int n_s = 0;
  int n_dir = 0, n_lev = 0;
  std::vector<SphereGrid::Stencil> stencils;  // ((n * n_lev + lp) * n_lev + l) * n_s + s

  const SphereGrid::Stencil& at(int n, int lp, int l, int s) const {
    return stencils[(static_cast<std::size_t>(n) * n_lev + lp) * n_lev * n_s +
                    static_cast<std::size_t>(l) * n_s + s];
  }
};

CurvePlan build_curve_plan(const PhaseSpaceGrid& grid, int n_s);

/// Triples of per-species scalar fields on the phase-space grid.
struct SpeciesField {
  std::array<std::vector<double>, 3> f;

  explicit SpeciesField(const PhaseSpaceGrid& grid) {
    for (auto& v : f) v.assign(grid.field_size(), 0.0);
  }
  SpeciesField() = default;

  std::vector<double>& operator[](int j) { return f[j]; }
  const std::vector<double>& operator[](int j) const { return f[j]; }
};

/// Curve-integral collision operator application (the Moller variety):
/// out(x,w,E) = sum_{E' levels} sigma0(x) table(E',E) wE(E') x
///              trapezoid_s psi(x, gamma(E',E,w)(s), E').
void apply_K3(const PhaseSpaceGrid& grid, const CurvePlan& plan, const RestrictedKernel& kernel,
              std::span<const double> sigma0, std::span<const double> psi, std::span<double> out);

/// W-adjoint of apply_K3 (scatter through the same stencils).
void apply_K3_adjoint(const PhaseSpaceGrid& grid, const CurvePlan& plan,
                      const RestrictedKernel& kernel, std::span<const double> sigma0,
                      std::span<const double> psi, std::span<double> out);

/// Dense-table varieties for small grids; tables are x-independent here.
/// sigma1 is indexed (n', n, lp, l); sigma2 is indexed (n', n, l).
void apply_K1_dense(const PhaseSpaceGrid& grid, std::span<const double> sigma1,
                    std::span<const double> psi, std::span<double> out);
void apply_K2_dense(const PhaseSpaceGrid& grid, std::span<const double> sigma2,
                    std::span<const double> psi, std::span<double> out);

/// Matrix-free coupled collision operator with precomputed curve stencils.
/// Applications are linear, positivity-preserving, and exactly W-adjoint.
class CollisionOperator {
 public:
  CollisionOperator() = default;
  CollisionOperator(const PhaseSpaceGrid& grid, CoupledKernelSet set, const MollerData& data,
                    int n_s = 16);

  void apply(const SpeciesField& psi, SpeciesField& out) const;
  void apply_adjoint(const SpeciesField& psi, SpeciesField& out) const;

  const CoupledKernelSet& kernel_set() const { return set_; }
  const CurvePlan& plan() const { return plan_; }
  int n_s() const { return plan_.n_s; }

  /// Power-iteration estimate of the W-weighted operator 2-norm.
  double norm_estimate(std::uint64_t seed, int iters = 120) const;

 private:
  void apply_impl(const SpeciesField& psi, SpeciesField& out, bool adjoint) const;

  const PhaseSpaceGrid* grid_ = nullptr;  // owned by the problem's shared_ptr
  CoupledKernelSet set_;
  std::vector<double> sigma0_;            // per-voxel curve-kernel scale
  CurvePlan plan_;
};

}  // namespace csda
