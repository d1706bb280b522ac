#include "csda/collision.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace csda {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

RotationFrame rotation_to(const Vec3& omega) {
  RotationFrame r;
  const double c = omega.z;  // cos(angle between e3 and omega)
  if (c > 1.0 - 1e-14) {
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  if (c < -1.0 + 1e-14) {
    r.m = {1, 0, 0, 0, -1, 0, 0, 0, -1};
    return r;
  }
  const Vec3 k = normalized(Vec3{-omega.y, omega.x, 0.0});  // e3 x omega direction
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double t = 1.0 - c;
  r.m = {c + t * k.x * k.x, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
         t * k.x * k.y + s * k.z, c + t * k.y * k.y, t * k.y * k.z - s * k.x,
         t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, c + t * k.z * k.z};
  return r;
}

Vec3 curve_point(double e_prime, double e, const Vec3& omega, double s) {
  const double mu = moller_mu(e_prime, e);
  if (mu >= 1.0) return omega;  // gamma(E,E,w)(s) = w
  const double rho = std::sqrt(std::max(0.0, 1.0 - mu * mu));
  return rotation_to(omega).apply({rho * std::cos(s), rho * std::sin(s), mu});
}

CurvePlan build_curve_plan(const PhaseSpaceGrid& grid, int n_s) {
  if (n_s < 4) throw std::invalid_argument("build_curve_plan: n_s must be at least 4");
  CurvePlan plan;
  plan.n_s = n_s;
  plan.n_dir = grid.n_dir();
  plan.n_lev = grid.n_lev();
  plan.stencils.resize(static_cast<std::size_t>(plan.n_dir) * plan.n_lev * plan.n_lev * n_s);
  for (int n = 0; n < plan.n_dir; ++n) {
    const Vec3 omega = grid.sphere.nodes[n];
    const RotationFrame rot = rotation_to(omega);
    for (int lp = 0; lp < plan.n_lev; ++lp) {
      for (int l = lp; l < plan.n_lev; ++l) {  // levels descend, so E' >= E iff lp <= l
        const double ep = grid.energy.levels[lp], e = grid.energy.levels[l];
        const double mu = moller_mu(ep, e);
        const double rho = std::sqrt(std::max(0.0, 1.0 - mu * mu));
        for (int s = 0; s < n_s; ++s) {
          SphereGrid::Stencil st;
          if (lp == l) {
            st.node = {n, n, n};
            st.w = {1.0, 0.0, 0.0};
          } else {
            const double ang = kTwoPi * s / n_s;
            const Vec3 dir = rot.apply({rho * std::cos(ang), rho * std::sin(ang), mu});
            st = grid.sphere.locate(dir);
          }
          plan.stencils[(static_cast<std::size_t>(n) * plan.n_lev + lp) * plan.n_lev * n_s +
                        static_cast<std::size_t>(l) * n_s + s] = st;
        }
      }
    }
  }
  return plan;
}

void apply_K3(const PhaseSpaceGrid& grid, const CurvePlan& plan, const RestrictedKernel& kernel,
              std::span<const double> sigma0, std::span<const double> psi, std::span<double> out) {
  if (psi.size() != grid.field_size() || out.size() != grid.field_size())
    throw std::invalid_argument("apply_K3: shape mismatch");
  const int nl = grid.n_lev(), nn = grid.n_dir();
  const double sw = kTwoPi / plan.n_s;
  parallel_for(grid.n_vox(), [&](int v) {
    const double s0 = sigma0[v];
    for (int n = 0; n < nn; ++n) {
      for (int l = 0; l < nl; ++l) {
        double acc = 0.0;
        for (int lp = 0; lp <= l; ++lp) {
          const double kval = kernel.at(lp, l);
          if (kval == 0.0) continue;
          double circ = 0.0;
          for (int s = 0; s < plan.n_s; ++s) {
            const auto& st = plan.at(n, lp, l, s);
            circ += st.w[0] * psi[grid.idx(v, st.node[0], lp)] +
                    st.w[1] * psi[grid.idx(v, st.node[1], lp)] +
                    st.w[2] * psi[grid.idx(v, st.node[2], lp)];
          }
          acc += kval * grid.energy.weights[lp] * sw * circ;
        }
        out[grid.idx(v, n, l)] += s0 * acc;
      }
    }
  });
}

void apply_K3_adjoint(const PhaseSpaceGrid& grid, const CurvePlan& plan,
                      const RestrictedKernel& kernel, std::span<const double> sigma0,
                      std::span<const double> psi, std::span<double> out) {
  if (psi.size() != grid.field_size() || out.size() != grid.field_size())
    throw std::invalid_argument("apply_K3_adjoint: shape mismatch");
  const int nl = grid.n_lev(), nn = grid.n_dir();
  const double sw = kTwoPi / plan.n_s;
  const auto& ww = grid.sphere.weights;
  parallel_for(grid.n_vox(), [&](int v) {
    const double s0 = sigma0[v];
    for (int n = 0; n < nn; ++n) {
      for (int l = 0; l < nl; ++l) {
        const double phi = psi[grid.idx(v, n, l)];
        if (phi == 0.0) continue;
        const double common = s0 * grid.energy.weights[l] * sw * ww[n] * phi;
        for (int lp = 0; lp <= l; ++lp) {
          const double kval = kernel.at(lp, l);
          if (kval == 0.0) continue;
          const double factor = common * kval;
          for (int s = 0; s < plan.n_s; ++s) {
            const auto& st = plan.at(n, lp, l, s);
            for (int t = 0; t < 3; ++t)
              out[grid.idx(v, st.node[t], lp)] += factor * st.w[t] / ww[st.node[t]];
          }
        }
      }
    }
  });
}

void apply_K1_dense(const PhaseSpaceGrid& grid, std::span<const double> sigma1,
                    std::span<const double> psi, std::span<double> out) {
  const int nn = grid.n_dir(), nl = grid.n_lev();
  const std::size_t want = static_cast<std::size_t>(nn) * nn * nl * nl;
  if (sigma1.size() != want) throw std::invalid_argument("apply_K1_dense: table shape mismatch");
  for (std::size_t i = 0; i < sigma1.size(); ++i)
    if (!(sigma1[i] >= 0.0) || !std::isfinite(sigma1[i]))
      throw std::runtime_error("apply_K1_dense: Schur validation failed (negative or non-finite)");
  for (int v = 0; v < grid.n_vox(); ++v)
    for (int n = 0; n < nn; ++n)
      for (int l = 0; l < nl; ++l) {
        double acc = 0.0;
        for (int np = 0; np < nn; ++np)
          for (int lp = 0; lp < nl; ++lp) {
            const double s = sigma1[((static_cast<std::size_t>(np) * nn + n) * nl + lp) * nl + l];
            acc += s * grid.sphere.weights[np] * grid.energy.weights[lp] *
                   psi[grid.idx(v, np, lp)];
          }
        out[grid.idx(v, n, l)] += acc;
      }
}

void apply_K2_dense(const PhaseSpaceGrid& grid, std::span<const double> sigma2,
                    std::span<const double> psi, std::span<double> out) {
  const int nn = grid.n_dir(), nl = grid.n_lev();
  const std::size_t want = static_cast<std::size_t>(nn) * nn * nl;
  if (sigma2.size() != want) throw std::invalid_argument("apply_K2_dense: table shape mismatch");
  for (std::size_t i = 0; i < sigma2.size(); ++i)
    if (!(sigma2[i] >= 0.0) || !std::isfinite(sigma2[i]))
      throw std::runtime_error("apply_K2_dense: Schur validation failed (negative or non-finite)");
  for (int v = 0; v < grid.n_vox(); ++v)
    for (int n = 0; n < nn; ++n)
      for (int l = 0; l < nl; ++l) {
        double acc = 0.0;
        for (int np = 0; np < nn; ++np) {
          const double s = sigma2[(static_cast<std::size_t>(np) * nn + n) * nl + l];
          acc += s * grid.sphere.weights[np] * psi[grid.idx(v, np, l)];
        }
        out[grid.idx(v, n, l)] += acc;
      }
}

// ---------------------------------------------------------------------------
// Coupled operator

CollisionOperator::CollisionOperator(const PhaseSpaceGrid& grid, CoupledKernelSet set,
                                     const MollerData& data, int n_s)
    : grid_(&grid), set_(std::move(set)), sigma0_(data.sigma0) {
  if (!set_.validated) set_.validate(grid, data);
  bool needs_plan = false;
  for (const auto& e : set_.entries)
    if (e.variety == KernelVariety::Curve) needs_plan = true;
  if (needs_plan) plan_ = build_curve_plan(grid, n_s);
}

void CollisionOperator::apply(const SpeciesField& psi, SpeciesField& out) const {
  apply_impl(psi, out, false);
}

void CollisionOperator::apply_adjoint(const SpeciesField& psi, SpeciesField& out) const {
  apply_impl(psi, out, true);
}

void CollisionOperator::apply_impl(const SpeciesField& psi, SpeciesField& out,
                                   bool adjoint) const {
  const auto& g = *grid_;
  if (!set_.validated) throw std::runtime_error("CollisionOperator: kernel set not validated");
  for (int j = 0; j < 3; ++j) std::fill(out[j].begin(), out[j].end(), 0.0);

  const int nn = g.n_dir(), nl = g.n_lev();
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 3; ++j) {
      // Forward: entry (k -> j) maps psi_k into out_j.
      // Adjoint: the same entry maps psi_j into out_k with swapped arguments.
      const KernelEntry& e = set_.entry(k, j);
      const int src = adjoint ? j : k;
      const int dst = adjoint ? k : j;
      switch (e.variety) {
        case KernelVariety::None:
          break;
        case KernelVariety::Full: {
          const auto& in_omega = adjoint ? e.sep.q : e.sep.u;
          const auto& in_energy = adjoint ? e.sep.r : e.sep.p;
          const auto& out_omega = adjoint ? e.sep.u : e.sep.q;
          const auto& out_energy = adjoint ? e.sep.p : e.sep.r;
          for (int v = 0; v < g.n_vox(); ++v) {
            double inner = 0.0;
            for (int n = 0; n < nn; ++n) {
              const double wn = in_omega[n] * g.sphere.weights[n];
              for (int l = 0; l < nl; ++l)
                inner += wn * in_energy[l] * g.energy.weights[l] * psi[src][g.idx(v, n, l)];
            }
            inner *= e.sep.scale;
            for (int n = 0; n < nn; ++n)
              for (int l = 0; l < nl; ++l)
                out[dst][g.idx(v, n, l)] += inner * out_omega[n] * out_energy[l];
          }
          break;
        }
        case KernelVariety::EnergyLocal: {
          const auto& in_omega = adjoint ? e.sep.q : e.sep.u;
          const auto& out_omega = adjoint ? e.sep.u : e.sep.q;
          for (int v = 0; v < g.n_vox(); ++v)
            for (int l = 0; l < nl; ++l) {
              double inner = 0.0;
              for (int n = 0; n < nn; ++n)
                inner += in_omega[n] * g.sphere.weights[n] * psi[src][g.idx(v, n, l)];
              inner *= e.sep.scale * e.sep.r[l];
              for (int n = 0; n < nn; ++n)
                out[dst][g.idx(v, n, l)] += inner * out_omega[n];
            }
          break;
        }
        case KernelVariety::Curve: {
          if (adjoint)
            apply_K3_adjoint(g, plan_, *e.curve, sigma0_, psi[src], out[dst]);
          else
            apply_K3(g, plan_, *e.curve, sigma0_, psi[src], out[dst]);
          break;
        }
      }
    }
  }
}

double CollisionOperator::norm_estimate(std::uint64_t seed, int iters) const {
  const auto& g = *grid_;
  const std::size_t fs = g.field_size();
  const std::vector<double> wq = g.quadrature_weights();
  std::vector<double> weights(3 * fs);
  for (int j = 0; j < 3; ++j)
    std::copy(wq.begin(), wq.end(), weights.begin() + j * fs);

  auto wrap = [&](bool adjoint) {
    return [this, fs, adjoint, &g](std::span<const double> x, std::span<double> y) {
      SpeciesField in(g), out(g);
      for (int j = 0; j < 3; ++j)
        std::copy(x.begin() + j * fs, x.begin() + (j + 1) * fs, in[j].begin());
      if (adjoint)
        apply_adjoint(in, out);
      else
        apply(in, out);
      for (int j = 0; j < 3; ++j)
        std::copy(out[j].begin(), out[j].end(), y.begin() + j * fs);
    };
  };
  return operator_norm_power(wrap(false), wrap(true), weights, 3 * fs, seed, iters);
}

}  // namespace csda
