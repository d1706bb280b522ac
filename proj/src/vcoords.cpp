#include "csda/vcoords.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "csda/collision.hpp"

namespace csda {

Vec3 to_velocity(const Vec3& omega, double e) {
  if (e <= 0.0) throw std::domain_error("to_velocity: energy must be positive");
  return omega * std::sqrt(e);
}

std::pair<Vec3, double> from_velocity(const Vec3& v, double e_min, double e_max) {
  const double r = norm(v);
  if (!(r * r > e_min && r * r < e_max))
    throw std::domain_error("from_velocity: |v| outside the open shell");
  return {v / r, r * r};
}

namespace {

bool near_seam(const Vec3& v, double margin) {
  return std::abs(v.y) <= margin * std::max(1.0, norm(v)) && v.x >= -margin;
}

bool near_axis(const Vec3& v, double margin) { return v.x * v.x + v.y * v.y < margin; }

}  // namespace

VelocityGrid build_velocity_grid(const PhaseSpaceGrid& grid, bool matched) {
  const auto& en = grid.energy;
  const int nl = en.n_levels();
  if (nl < 4) throw std::invalid_argument("build_velocity_grid: need at least 4 energy levels");
  VelocityGrid vg;
  vg.r0 = std::sqrt(en.e_min());
  vg.rm = std::sqrt(en.e_max());

  // Fixed tilt keeping mesh nodes off the seam and the v3 axis.
  RotationFrame rot = rotation_to(normalized(Vec3{0.31, 0.47, 0.82}));

  for (int l = 1; l + 1 < nl; ++l) {
    const double e = en.levels[l];
    const double r = std::sqrt(e);
    // Shell bounds at energy midpoints.
    const double e_hi = 0.5 * (en.levels[l - 1] + en.levels[l]);
    const double e_lo = 0.5 * (en.levels[l] + en.levels[l + 1]);
    const double r_hi = std::sqrt(e_hi), r_lo = std::sqrt(e_lo);
    for (int n = 0; n < grid.n_dir(); ++n) {
      Vec3 dir = grid.sphere.nodes[n];
      if (!matched) dir = rot.apply(dir);
      const Vec3 v = dir * r;
      const bool bad = near_seam(v, 1e-5) || near_axis(v, 1e-10);
      if (bad && !matched)
        throw std::runtime_error("build_velocity_grid: node on seam or axis after rotation");
      vg.nodes.push_back(v);
      vg.weights.push_back(grid.sphere.weights[n] * (r_hi * r_hi * r_hi - r_lo * r_lo * r_lo) /
                           3.0);
      vg.sphere_node.push_back(n);
      vg.energy_level.push_back(l);
      vg.excluded.push_back(bad);
    }
  }
  return vg;
}

double transform_a(double a, const Vec3& v) { return a / (2.0 * dot(v, v)); }
double transform_b(double b, const Vec3& v) { (void)v; return b; }
double transform_sigma(double sigma, const Vec3& v) { (void)v; return sigma; }

double apply_P(const std::function<double(const Vec3&)>& psi, const Vec3& v, double h) {
  const double rho2 = v.x * v.x + v.y * v.y;
  if (rho2 < 1e-10) throw std::domain_error("apply_P: chart singularity near the v3 axis");
  const double v2 = dot(v, v);

  auto at = [&](double dx, double dy, double dz) {
    return psi({v.x + dx, v.y + dy, v.z + dz});
  };
  const double f0 = psi(v);
  auto d2 = [&](int i) {
    Vec3 e{0, 0, 0};
    e[i] = h;
    return (psi(v + e) - 2.0 * f0 + psi(v - e)) / (h * h);
  };
  auto dij = [&](int i, int j) {
    Vec3 ei{0, 0, 0}, ej{0, 0, 0};
    ei[i] = h;
    ej[j] = h;
    return (psi(v + ei + ej) - psi(v + ei - ej) - psi(v - ei + ej) + psi(v - ei - ej)) /
           (4.0 * h * h);
  };
  (void)at;

  const double c11 = (v2 * v.y * v.y + v.x * v.x * v.z * v.z) / rho2;
  const double c22 = (v2 * v.x * v.x + v.y * v.y * v.z * v.z) / rho2;
  const double c33 = rho2;
  return c11 * d2(0) + c22 * d2(1) + c33 * d2(2) - 2.0 * v.x * v.y * dij(0, 1) -
         2.0 * v.x * v.z * dij(0, 2) - 2.0 * v.y * v.z * dij(1, 2);
}

double velocity_radial_term(const std::function<double(const Vec3&)>& psi, const Vec3& v,
                            double h) {
  double g = 0.0;
  for (int i = 0; i < 3; ++i) {
    Vec3 e{0, 0, 0};
    e[i] = h;
    g += v[i] * (psi(v + e) - psi(v - e)) / (2.0 * h);
  }
  return g;
}

double equivalence_residual(const TransportProblem& prob,
                            const std::function<double(const Vec3&, const Vec3&, double)>& psi,
                            const EquivalenceOptions& opt) {
  const auto& g = prob.g();
  const auto& sp = g.spatial;
  const auto& en = g.energy;
  const int nn = g.n_dir(), nl = g.n_lev();

  // Sphere-side: sample psi on the grid and apply the discrete operator.
  SpeciesField sampled(g), t_side(g);
  for (int v = 0; v < g.n_vox(); ++v) {
    const auto& c = sp.coords_of_active[v];
    const Vec3 x = sp.cell_center(c[0], c[1], c[2]);
    for (int n = 0; n < nn; ++n)
      for (int l = 0; l < nl; ++l)
        sampled[kElectron][g.idx(v, n, l)] = psi(x, g.sphere.nodes[n], en.levels[l]);
  }
  ApplyOptions aop;
  aop.include_sigma = opt.include_sigma;
  aop.include_collision = opt.include_kernel;
  apply_transport(prob, sampled, t_side, aop);

  const VelocityGrid vg = build_velocity_grid(g, true);

  // Interior voxels only: all six spatial neighbors present.
  std::vector<bool> interior(g.n_vox(), true);
  for (int v = 0; v < g.n_vox(); ++v)
    for (int a = 0; a < 3; ++a)
      for (int d = -1; d <= 1; d += 2)
        if (sp.neighbor(v, a, d) < 0) interior[v] = false;

  const double h_fd = opt.fd_step_factor * std::sqrt(en.e_min());
  double num = 0.0, den = 0.0;
  for (int v = 0; v < g.n_vox(); ++v) {
    if (!interior[v]) continue;
    const auto& cc = sp.coords_of_active[v];
    const Vec3 x = sp.cell_center(cc[0], cc[1], cc[2]);
    auto psi_v = [&](const Vec3& w) {
      const double e = dot(w, w);
      return psi(x, w / std::sqrt(e), e);
    };
    for (int k = 0; k < vg.n_nodes(); ++k) {
      if (vg.excluded[k]) continue;
      const int n = vg.sphere_node[k];
      const int l = vg.energy_level[k];
      const Vec3 vv = vg.nodes[k];

      const double a = prob.a_of(kElectron, v, l);
      const double b = prob.b_of(kElectron, v, l);
      const double a_t = transform_a(a, vv);
      const double b_t = transform_b(b, vv);

      double tt = b_t * apply_P(psi_v, vv, h_fd) +
                  (a_t - 2.0 * b_t) * velocity_radial_term(psi_v, vv, h_fd);
      // (1/|v|) v . grad_x Psi by central differences in x.
      const double r = norm(vv);
      const Vec3 omega = vv / r;
      for (int axis = 0; axis < 3; ++axis) {
        Vec3 dx{0, 0, 0};
        dx[axis] = sp.spacing[axis];
        const Vec3 xp = x + dx, xm = x - dx;
        tt += omega[axis] * (psi(xp, omega, r * r) - psi(xm, omega, r * r)) /
              (2.0 * sp.spacing[axis]);
      }
      if (opt.include_sigma) tt += transform_sigma(prob.sigma_of(kElectron, v, l), vv) *
                                   psi_v(vv);
      if (opt.include_kernel) {
        // Transformed curve kernel by shell quadrature (Moller entry 2->2).
        const auto& entry = prob.collision.kernel_set().entry(kElectron, kElectron);
        if (entry.variety == KernelVariety::Curve) {
          const auto& plan = prob.collision.plan();
          const double s0 = prob.data.sigma0[v];
          // sigma~3 = (1/2pi)(1/|v'|) sigma3; the dv' shell integral reduces
          // to the shell volume since the integrand depends on |v'| only.
          double acc2 = 0.0;
          for (int lp = 1; lp <= l; ++lp) {
            const double kval = entry.curve->at(lp, l);
            if (kval == 0.0) continue;
            double shell_w = 0.0;
            for (int q = 0; q < vg.n_nodes(); ++q)
              if (vg.energy_level[q] == lp) shell_w += vg.weights[q];
            const double rp = std::sqrt(en.levels[lp]);
            double circ = 0.0;
            for (int s = 0; s < plan.n_s; ++s) {
              const auto& st = plan.at(n, lp, l, s);
              for (int t = 0; t < 3; ++t)
                circ += st.w[t] * psi(x, g.sphere.nodes[st.node[t]], en.levels[lp]);
            }
            circ *= 2.0 * std::numbers::pi / plan.n_s;
            acc2 += (1.0 / (2.0 * std::numbers::pi)) * (s0 * kval / rp) * shell_w * circ;
          }
          tt -= acc2;
        }
      }

      const double lhs = t_side[kElectron][g.idx(v, n, l)];
      const double w = sp.voxel_volume() * vg.weights[k];
      num += w * (lhs - tt) * (lhs - tt);
      den += w * psi_v(vv) * psi_v(vv);
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace csda
