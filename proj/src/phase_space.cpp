#include "csda/phase_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

namespace csda {

namespace {
constexpr double kFourPi = 4.0 * std::numbers::pi;
}

SpatialGrid SpatialGrid::box(const Vec3& origin, const Vec3& spacing, std::array<int, 3> dims,
                             std::vector<Region> labels) {
  if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
    throw std::invalid_argument("SpatialGrid: spacing must be positive");
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (labels.size() != n) throw std::invalid_argument("SpatialGrid: label count mismatch");
  SpatialGrid g;
  g.origin = origin;
  g.spacing = spacing;
  g.dims = dims;
  g.labels = std::move(labels);
  g.active_of_cell.assign(n, -1);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const int c = g.cell_index(i, j, k);
        if (g.labels[c] != Region::Outside) {
          g.active_of_cell[c] = static_cast<int>(g.cell_of_active.size());
          g.cell_of_active.push_back(c);
          g.coords_of_active.push_back({i, j, k});
        }
      }
  if (g.cell_of_active.empty()) throw std::invalid_argument("SpatialGrid: no active voxels");
  return g;
}

SpatialGrid SpatialGrid::uniform_box(const Vec3& origin, const Vec3& spacing,
                                     std::array<int, 3> dims, Region fill) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  return box(origin, spacing, dims, std::vector<Region>(n, fill));
}

bool SpatialGrid::inside(const Vec3& p) const { return label_at(p) != Region::Outside; }

Region SpatialGrid::label_at(const Vec3& p) const {
  const int i = static_cast<int>(std::floor((p.x - origin.x) / spacing.x));
  const int j = static_cast<int>(std::floor((p.y - origin.y) / spacing.y));
  const int k = static_cast<int>(std::floor((p.z - origin.z) / spacing.z));
  if (i < 0 || i >= dims[0] || j < 0 || j >= dims[1] || k < 0 || k >= dims[2])
    return Region::Outside;
  return labels[cell_index(i, j, k)];
}

int SpatialGrid::neighbor(int active, int axis, int dir) const {
  auto c = coords_of_active[active];
  c[axis] += dir;
  if (c[axis] < 0 || c[axis] >= dims[axis]) return -1;
  return active_of_cell[cell_index(c[0], c[1], c[2])];
}

double escape_time(const SpatialGrid& grid, const Vec3& x, const Vec3& omega) {
  if (!grid.inside(x)) throw std::domain_error("escape_time: point outside the domain");
  // March along -omega through voxel faces (Amanatides-Woo traversal).
  const Vec3 d = omega * -1.0;
  int ijk[3];
  for (int a = 0; a < 3; ++a) {
    ijk[a] = static_cast<int>(std::floor((x[a] - grid.origin[a]) / grid.spacing[a]));
    ijk[a] = std::clamp(ijk[a], 0, grid.dims[a] - 1);
  }
  double t_max[3], t_delta[3];
  int step[3];
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    } else {
      step[a] = d[a] > 0 ? 1 : -1;
      const double face = grid.origin[a] + (ijk[a] + (step[a] > 0 ? 1 : 0)) * grid.spacing[a];
      t_max[a] = (face - x[a]) / d[a];
      t_delta[a] = grid.spacing[a] / std::abs(d[a]);
    }
  }
  double t = 0.0;
  for (int guard = 0; guard < 8 * (grid.dims[0] + grid.dims[1] + grid.dims[2]); ++guard) {
    const int a = (t_max[0] <= t_max[1] && t_max[0] <= t_max[2]) ? 0 : (t_max[1] <= t_max[2] ? 1 : 2);
    t = t_max[a];
    ijk[a] += step[a];
    t_max[a] += t_delta[a];
    if (ijk[a] < 0 || ijk[a] >= grid.dims[a]) return t;
    if (grid.labels[grid.cell_index(ijk[0], ijk[1], ijk[2])] == Region::Outside) return t;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sphere grid

namespace {

// Solid angle of the spherical triangle (a,b,c) via Oosterom-Strackee.
double spherical_triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double num = std::abs(dot(a, cross(b, c)));
  const double den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
  return 2.0 * std::atan2(num, den);
}

Vec3 triangle_circumcenter_on_sphere(const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 n = cross(b - a, c - a);
  n = normalized(n);
  // Orient toward the triangle itself.
  if (dot(n, a + b + c) < 0.0) n = n * -1.0;
  return n;
}

}  // namespace

SphereGrid build_sphere_grid(int subdivision_level) {
  if (subdivision_level < 0) throw std::invalid_argument("build_sphere_grid: level must be >= 0");

  // Icosahedron from the golden-ratio rectangles.
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : verts) v = normalized(v);
  std::vector<std::array<int, 3>> tris = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

  for (int level = 0; level < subdivision_level; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const int id = static_cast<int>(verts.size());
      verts.push_back(normalized((verts[a] + verts[b]) * 0.5));
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(tris.size() * 4);
    for (const auto& t : tris) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris = std::move(next);
  }

  SphereGrid g;
  g.nodes = std::move(verts);
  g.triangles = std::move(tris);
  const int nn = g.n_nodes();
  g.weights.assign(nn, 0.0);
  g.node_triangles.assign(nn, {});

  // Spherical Voronoi areas: per incident triangle, the two sub-triangles
  // (node, edge midpoint, circumcenter). Geodesic icosahedral triangles are
  // acute, so circumcenters stay interior and the cells tile the sphere.
  for (int ti = 0; ti < static_cast<int>(g.triangles.size()); ++ti) {
    const auto& t = g.triangles[ti];
    const Vec3 cc = triangle_circumcenter_on_sphere(g.nodes[t[0]], g.nodes[t[1]], g.nodes[t[2]]);
    for (int e = 0; e < 3; ++e) {
      const int v = t[e], u = t[(e + 1) % 3], w = t[(e + 2) % 3];
      const Vec3 mu = normalized((g.nodes[v] + g.nodes[u]) * 0.5);
      const Vec3 mw = normalized((g.nodes[v] + g.nodes[w]) * 0.5);
      g.weights[v] += spherical_triangle_area(g.nodes[v], mu, cc) +
                      spherical_triangle_area(g.nodes[v], cc, mw);
      g.node_triangles[v].push_back(ti);
    }
  }

  // Cotangent edge weights from the flat triangles.
  std::map<std::pair<int, int>, double> cot;
  for (const auto& t : g.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int i = t[e], j = t[(e + 1) % 3], k = t[(e + 2) % 3];
      const Vec3 a = g.nodes[i] - g.nodes[k];
      const Vec3 b = g.nodes[j] - g.nodes[k];
      const double cot_k = dot(a, b) / norm(cross(a, b));
      cot[std::minmax(i, j)] += 0.5 * cot_k;
    }
  }

  std::vector<std::map<int, double>> rows(nn);
  for (const auto& [key, w] : cot) {
    if (w <= 0.0) throw std::runtime_error("build_sphere_grid: non-positive cotangent weight");
    const auto [i, j] = key;
    const double len = norm(g.nodes[i] - g.nodes[j]);
    g.edges.push_back({i, j, len, w * len * len});
    rows[i][j] += w;
    rows[j][i] += w;
    rows[i][i] -= w;
    rows[j][j] -= w;
  }
  g.lap_rows.assign(nn, {});
  for (int i = 0; i < nn; ++i)
    for (const auto& [j, w] : rows[i]) g.lap_rows[i].push_back({j, w});
  return g;
}

void SphereGrid::apply_lap(std::span<const double> u, std::span<double> out) const {
  for (int i = 0; i < n_nodes(); ++i) {
    double s = 0.0;
    for (const auto& [j, w] : lap_rows[i]) s += w * u[j];
    out[i] = s;
  }
}

void SphereGrid::apply_lb(std::span<const double> u, std::span<double> out) const {
  apply_lap(u, out);
  for (int i = 0; i < n_nodes(); ++i) out[i] /= weights[i];
}

double SphereGrid::grad_inner(std::span<const double> u, std::span<const double> v) const {
  double s = 0.0;
  for (const auto& e : edges) {
    const double du = (u[e.b] - u[e.a]) / e.length;
    const double dv = (v[e.b] - v[e.a]) / e.length;
    s += e.grad_weight * du * dv;
  }
  return s;
}

SphereGrid::Stencil SphereGrid::locate(const Vec3& dir) const {
  // Nearest node first, then its incident triangles; full scan as fallback.
  int best = 0;
  double bd = -2.0;
  for (int i = 0; i < n_nodes(); ++i) {
    const double d = dot(nodes[i], dir);
    if (d > bd) { bd = d; best = i; }
  }
  auto try_triangle = [&](int ti, Stencil& st) {
    const auto& t = triangles[ti];
    const Vec3 &a = nodes[t[0]], &b = nodes[t[1]], &c = nodes[t[2]];
    // Solve dir = alpha a + beta b + gamma c (gnomonic barycentrics).
    const double det = dot(a, cross(b, c));
    if (std::abs(det) < 1e-14) return false;
    double al = dot(dir, cross(b, c)) / det;
    double be = dot(a, cross(dir, c)) / det;
    double ga = dot(a, cross(b, dir)) / det;
    const double tol = -1e-10;
    if (al < tol || be < tol || ga < tol) return false;
    al = std::max(al, 0.0); be = std::max(be, 0.0); ga = std::max(ga, 0.0);
    const double s = al + be + ga;
    st.node = {t[0], t[1], t[2]};
    st.w = {al / s, be / s, ga / s};
    return true;
  };
  Stencil st;
  for (int ti : node_triangles[best])
    if (try_triangle(ti, st)) return st;
  for (int ti = 0; ti < static_cast<int>(triangles.size()); ++ti)
    if (try_triangle(ti, st)) return st;
  // Numerically on an edge/vertex seam: snap to the nearest node.
  st.node = {best, best, best};
  st.w = {1.0, 0.0, 0.0};
  return st;
}

// ---------------------------------------------------------------------------
// Energy grid

EnergyGrid EnergyGrid::uniform(double e_max, double e_min, int n_levels) {
  if (n_levels < 2) throw std::invalid_argument("EnergyGrid: need at least 2 levels");
  if (!(e_max > e_min) || e_min < 0.0) throw std::invalid_argument("EnergyGrid: need E_m > E_0 >= 0");
  std::vector<double> lv(n_levels);
  const double h = (e_max - e_min) / (n_levels - 1);
  for (int l = 0; l < n_levels; ++l) lv[l] = e_max - l * h;
  lv.back() = e_min;
  return from_levels(std::move(lv));
}

EnergyGrid EnergyGrid::from_levels(std::vector<double> levels) {
  if (levels.size() < 2) throw std::invalid_argument("EnergyGrid: need at least 2 levels");
  for (std::size_t l = 1; l < levels.size(); ++l)
    if (!(levels[l] < levels[l - 1]))
      throw std::invalid_argument("EnergyGrid: levels must be strictly decreasing");
  EnergyGrid g;
  g.levels = std::move(levels);
  const int n = g.n_levels();
  g.steps.assign(n, 0.0);
  for (int l = 1; l < n; ++l) g.steps[l] = g.levels[l - 1] - g.levels[l];
  g.steps[0] = g.steps[1];
  g.weights.assign(n, 0.0);
  for (int l = 1; l < n; ++l) {
    g.weights[l - 1] += 0.5 * g.steps[l];
    g.weights[l] += 0.5 * g.steps[l];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Boundary classification

BoundaryFaces classify_boundary(const SpatialGrid& spatial, const SphereGrid& sphere) {
  BoundaryFaces b;
  const double tol = 1e-12;
  for (int v = 0; v < spatial.n_active(); ++v) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int dir = -1; dir <= 1; dir += 2) {
        if (spatial.neighbor(v, axis, dir) >= 0) continue;
        double area = 1.0;
        for (int a = 0; a < 3; ++a)
          if (a != axis) area *= spatial.spacing[a];
        b.faces.push_back({v, axis, dir, area});
      }
    }
  }
  const int nn = sphere.n_nodes();
  b.omega_dot_nu.resize(static_cast<std::size_t>(b.n_faces()) * nn);
  b.side.resize(b.omega_dot_nu.size());
  for (int f = 0; f < b.n_faces(); ++f) {
    const auto& face = b.faces[f];
    for (int n = 0; n < nn; ++n) {
      const double s = face.dir * sphere.nodes[n][face.axis];
      const std::size_t e = static_cast<std::size_t>(f) * nn + n;
      b.omega_dot_nu[e] = s;
      if (std::abs(s) <= tol) {
        b.side[e] = GammaSide::Zero;
      } else if (s < 0.0) {
        b.side[e] = GammaSide::Minus;
        b.minus_entries.push_back({f, n, std::abs(s) * face.area * sphere.weights[n]});
      } else {
        b.side[e] = GammaSide::Plus;
        b.plus_entries.push_back({f, n, std::abs(s) * face.area * sphere.weights[n]});
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Phase-space grid

PhaseSpaceGrid::PhaseSpaceGrid(SpatialGrid s, SphereGrid o, EnergyGrid e)
    : spatial(std::move(s)), sphere(std::move(o)), energy(std::move(e)) {
  boundary = classify_boundary(spatial, sphere);
}

double PhaseSpaceGrid::integrate_phase(std::span<const double> field) const {
  if (field.size() != field_size()) throw std::invalid_argument("integrate_phase: shape mismatch");
  const double vol = spatial.voxel_volume();
  double total = 0.0;
  for (int v = 0; v < n_vox(); ++v)
    for (int n = 0; n < n_dir(); ++n) {
      double se = 0.0;
      const double* col = &field[idx(v, n, 0)];
      for (int l = 0; l < n_lev(); ++l) se += energy.weights[l] * col[l];
      total += vol * sphere.weights[n] * se;
    }
  return total;
}

double PhaseSpaceGrid::boundary_measure() const {
  double wsum = 0.0;
  for (const auto& e : boundary.minus_entries) wsum += e.weight;
  for (const auto& e : boundary.plus_entries) wsum += e.weight;
  return wsum * energy.length();
}

std::vector<double> PhaseSpaceGrid::quadrature_weights() const {
  std::vector<double> w(field_size());
  const double vol = spatial.voxel_volume();
  for (int v = 0; v < n_vox(); ++v)
    for (int n = 0; n < n_dir(); ++n)
      for (int l = 0; l < n_lev(); ++l)
        w[idx(v, n, l)] = vol * sphere.weights[n] * energy.weights[l];
  return w;
}

}  // namespace csda
