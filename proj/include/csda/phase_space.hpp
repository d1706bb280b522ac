#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csda/linalg.hpp"

namespace csda {

enum class Region : std::uint8_t { Target = 0, Critical = 1, Normal = 2, Outside = 3 };

/// Uniform axis-aligned voxel mesh with a region label per voxel.
/// The set of non-Outside voxels is the computational domain.
struct SpatialGrid {
  Vec3 origin;
  Vec3 spacing;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<Region> labels;  // x-fastest ordering, size dims[0]*dims[1]*dims[2]

  // Derived at build time.
  std::vector<int> active_of_cell;    // full-box cell -> active index, -1 if Outside
  std::vector<int> cell_of_active;    // active index -> full-box cell
  std::vector<std::array<int, 3>> coords_of_active;

  static SpatialGrid box(const Vec3& origin, const Vec3& spacing, std::array<int, 3> dims,
                         std::vector<Region> labels);
  static SpatialGrid uniform_box(const Vec3& origin, const Vec3& spacing, std::array<int, 3> dims,
                                 Region fill = Region::Normal);

  int cell_index(int i, int j, int k) const { return (k * dims[1] + j) * dims[0] + i; }
  int n_active() const { return static_cast<int>(cell_of_active.size()); }
  double voxel_volume() const { return spacing.x * spacing.y * spacing.z; }
  Vec3 cell_center(int i, int j, int k) const {
    return {origin.x + (i + 0.5) * spacing.x, origin.y + (j + 0.5) * spacing.y,
            origin.z + (k + 0.5) * spacing.z};
  }
  bool inside(const Vec3& p) const;        // p lies in a non-Outside voxel
  Region label_at(const Vec3& p) const;

  /// Active-voxel neighbor across face (axis, dir); -1 when the neighbor is
  /// Outside or beyond the box (a boundary face).
  int neighbor(int active, int axis, int dir) const;
};

/// t(x, omega) = inf{ s > 0 : x - s*omega not in G }, by voxel ray marching.
double escape_time(const SpatialGrid& grid, const Vec3& x, const Vec3& omega);

/// Icosahedral geodesic mesh on the unit sphere with Voronoi quadrature
/// weights and a symmetric graph Laplacian pair (stiffness, lumped mass).
struct SphereGrid {
  std::vector<Vec3> nodes;
  std::vector<double> weights;                   // spherical Voronoi areas, sum 4*pi
  std::vector<std::array<int, 3>> triangles;

  // lap is -G^T W G (symmetric, negative semidefinite, zero row sums);
  // apply_lb uses the mass-scaled operator  M^{-1} lap  ~ Laplace-Beltrami.
  struct Edge { int a, b; double length; double grad_weight; };
  std::vector<Edge> edges;
  std::vector<std::vector<std::pair<int, double>>> lap_rows;  // rows of lap
  std::vector<std::vector<int>> node_triangles;               // incident triangles

  int n_nodes() const { return static_cast<int>(nodes.size()); }

  void apply_lap(std::span<const double> u, std::span<double> out) const;   // lap * u
  void apply_lb(std::span<const double> u, std::span<double> out) const;    // M^{-1} lap * u
  double grad_inner(std::span<const double> u, std::span<const double> v) const;

  /// Barycentric interpolation stencil at a unit direction: three node ids
  /// with convex weights. Weights are clamped to be nonnegative.
  struct Stencil { std::array<int, 3> node; std::array<double, 3> w; };
  Stencil locate(const Vec3& dir) const;
};

SphereGrid build_sphere_grid(int subdivision_level);

/// Strictly decreasing energy levels from E_m down to E_0 (electron rest-mass
/// units). Trapezoid quadrature weights; step(l) = levels[l-1] - levels[l].
struct EnergyGrid {
  std::vector<double> levels;
  std::vector<double> steps;    // steps[0] = steps[1] by convention
  std::vector<double> weights;  // trapezoid, sum = E_m - E_0

  static EnergyGrid uniform(double e_max, double e_min, int n_levels);
  static EnergyGrid from_levels(std::vector<double> levels);

  int n_levels() const { return static_cast<int>(levels.size()); }
  double e_max() const { return levels.front(); }
  double e_min() const { return levels.back(); }
  double length() const { return e_max() - e_min(); }
};

enum class GammaSide : std::uint8_t { Minus, Plus, Zero };

/// Boundary faces of the active region paired with sphere nodes and split
/// into inflow / outflow / tangential sets by the sign of omega . nu.
struct BoundaryFaces {
  struct Face {
    int voxel;   // active index of the interior cell
    int axis;    // 0,1,2
    int dir;     // +1 or -1: outward normal = dir * e_axis
    double area;
  };
  std::vector<Face> faces;

  // Per (face, node): omega . nu and classification. Entry index = f * n_nodes + n.
  std::vector<double> omega_dot_nu;
  std::vector<GammaSide> side;

  // Flattened index lists for the minus/plus sets, with per-entry angular
  // weight |omega.nu| * area * w_omega (energy factor applied separately).
  struct Entry { int face; int node; double weight; };
  std::vector<Entry> minus_entries;
  std::vector<Entry> plus_entries;

  int n_faces() const { return static_cast<int>(faces.size()); }
};

BoundaryFaces classify_boundary(const SpatialGrid& spatial, const SphereGrid& sphere);

/// The discrete product G x S x I together with all quadratures.
struct PhaseSpaceGrid {
  SpatialGrid spatial;
  SphereGrid sphere;
  EnergyGrid energy;
  BoundaryFaces boundary;

  PhaseSpaceGrid() = default;
  PhaseSpaceGrid(SpatialGrid s, SphereGrid o, EnergyGrid e);

  int n_vox() const { return spatial.n_active(); }
  int n_dir() const { return sphere.n_nodes(); }
  int n_lev() const { return energy.n_levels(); }
  std::size_t field_size() const {
    return static_cast<std::size_t>(n_vox()) * n_dir() * n_lev();
  }
  std::size_t idx(int v, int n, int l) const {
    return (static_cast<std::size_t>(v) * n_dir() + n) * n_lev() + l;
  }

  /// Integral over G x S x I: voxel volume x Voronoi weight x trapezoid step.
  double integrate_phase(std::span<const double> field) const;

  /// T^2(Gamma) total weight of the constant-1 trace (diagnostic).
  double boundary_measure() const;

  std::vector<double> quadrature_weights() const;  // per phase-space node
};

}  // namespace csda
