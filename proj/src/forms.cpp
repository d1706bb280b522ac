#include "csda/forms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace csda {

namespace {

std::vector<double> level_slice(const PhaseSpaceGrid& grid, const SpeciesField& x, int j, int l) {
  std::vector<double> s(static_cast<std::size_t>(grid.n_vox()) * grid.n_dir());
  for (int v = 0; v < grid.n_vox(); ++v)
    for (int n = 0; n < grid.n_dir(); ++n)
      s[static_cast<std::size_t>(v) * grid.n_dir() + n] = x[j][grid.idx(v, n, l)];
  return s;
}

double gs_inner(const PhaseSpaceGrid& grid, std::span<const double> a, std::span<const double> b,
                std::span<const double> coef = {}) {
  // L2(G x S) product of (vox,node) slices, optional per-entry coefficient.
  const double vol = grid.spatial.voxel_volume();
  double s = 0.0;
  for (int v = 0; v < grid.n_vox(); ++v)
    for (int n = 0; n < grid.n_dir(); ++n) {
      const std::size_t i = static_cast<std::size_t>(v) * grid.n_dir() + n;
      const double c = coef.empty() ? 1.0 : coef[i];
      s += vol * grid.sphere.weights[n] * c * a[i] * b[i];
    }
  return s;
}

}  // namespace

DiscreteField DiscreteField::from_values(const PhaseSpaceGrid& grid, SpeciesField v) {
  DiscreteField f;
  f.values = std::move(v);
  (void)grid;
  return f;
}

DiscreteField DiscreteField::from_forward_solution(const PhaseSpaceGrid& grid, SpeciesField psi,
                                                   const BoundaryField& g_minus) {
  DiscreteField f;
  f.values = std::move(psi);
  f.gamma_minus = g_minus;
  const std::size_t gs = static_cast<std::size_t>(grid.n_vox()) * grid.n_dir();
  for (int j = 1; j < 3; ++j) f.slice_em[j].assign(gs, 0.0);
  return f;
}

DiscreteField DiscreteField::from_adjoint_solution(const PhaseSpaceGrid& grid,
                                                   SpeciesField psi_star,
                                                   const BoundaryField& g_plus) {
  DiscreteField f;
  f.values = std::move(psi_star);
  f.gamma_plus = g_plus;
  const std::size_t gs = static_cast<std::size_t>(grid.n_vox()) * grid.n_dir();
  for (int j = 1; j < 3; ++j) f.slice_e0[j].assign(gs, 0.0);
  return f;
}

BoundaryField DiscreteField::trace_minus(const PhaseSpaceGrid& grid) const {
  if (!gamma_minus.g[0].empty() || !gamma_minus.g[1].empty() || !gamma_minus.g[2].empty())
    return gamma_minus;
  return cell_trace(grid, values, false);
}

BoundaryField DiscreteField::trace_plus(const PhaseSpaceGrid& grid) const {
  if (!gamma_plus.g[0].empty() || !gamma_plus.g[1].empty() || !gamma_plus.g[2].empty())
    return gamma_plus;
  return cell_trace(grid, values, true);
}

std::vector<double> DiscreteField::endpoint_em(const PhaseSpaceGrid& grid, int species) const {
  if (!slice_em[species].empty()) return slice_em[species];
  return level_slice(grid, values, species, 0);
}

std::vector<double> DiscreteField::endpoint_e0(const PhaseSpaceGrid& grid, int species) const {
  if (!slice_e0[species].empty()) return slice_e0[species];
  return level_slice(grid, values, species, grid.n_lev() - 1);
}

// ---------------------------------------------------------------------------
// Norms

double norm_H(const TransportProblem& prob, const DiscreteField& field) {
  const auto& g = prob.g();
  double sq = species_inner(prob, field.values, field.values);

  const BoundaryField tm = field.trace_minus(g);
  const BoundaryField tp = field.trace_plus(g);
  sq += t2_inner(g, false, tm, tm) + t2_inner(g, true, tp, tp);

  for (int j = 1; j < 3; ++j) {
    const auto em = field.endpoint_em(g, j);
    const auto e0 = field.endpoint_e0(g, j);
    sq += gs_inner(g, em, em) + gs_inner(g, e0, e0);
    // L2(G x I, H1(S)) seminorm.
    std::vector<double> slice(g.n_dir());
    for (int v = 0; v < g.n_vox(); ++v)
      for (int l = 0; l < g.n_lev(); ++l) {
        for (int n = 0; n < g.n_dir(); ++n) slice[n] = field.values[j][g.idx(v, n, l)];
        sq += g.spatial.voxel_volume() * g.energy.weights[l] * g.sphere.grad_inner(slice, slice);
      }
  }
  return std::sqrt(sq);
}

double norm_Hhat(const TransportProblem& prob, const DiscreteField& field) {
  const auto& g = prob.g();
  const auto& sp = g.spatial;
  double sq = norm_H(prob, field);
  sq *= sq;
  const double vol = sp.voxel_volume();
  for (int j = 0; j < 3; ++j) {
    for (int v = 0; v < g.n_vox(); ++v)
      for (int n = 0; n < g.n_dir(); ++n) {
        const Vec3 omega = g.sphere.nodes[n];
        for (int l = 0; l < g.n_lev(); ++l) {
          double d = 0.0;
          for (int a = 0; a < 3; ++a) {
            if (std::abs(omega[a]) <= 1e-12) continue;
            const int up = sp.neighbor(v, a, omega[a] > 0 ? -1 : +1);
            const double nb = up >= 0 ? field.values[j][g.idx(up, n, l)] : 0.0;
            d += std::abs(omega[a]) / sp.spacing[a] * (field.values[j][g.idx(v, n, l)] - nb);
          }
          sq += vol * g.sphere.weights[n] * g.energy.weights[l] * d * d;
        }
        if (j != kPhoton) {
          for (int l = 1; l < g.n_lev(); ++l) {
            const double d = (field.values[j][g.idx(v, n, l - 1)] - field.values[j][g.idx(v, n, l)]) /
                             g.energy.steps[l];
            sq += vol * g.sphere.weights[n] * g.energy.weights[l] * d * d;
          }
        }
      }
  }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Assembled system

AssembledSystem::AssembledSystem(const TransportProblem& prob, bool adjoint)
    : prob_(&prob), adjoint_(adjoint) {
  if (!prob.hypotheses_validated)
    throw std::runtime_error("AssembledSystem: hypothesis validation has not run");
}

AssembledSystem assemble_forward(const TransportProblem& prob) {
  return AssembledSystem(prob, false);
}

AssembledSystem assemble_adjoint(const TransportProblem& prob) {
  return AssembledSystem(prob, true);
}

void AssembledSystem::apply(const SpeciesField& x, SpeciesField& y) const {
  ApplyOptions opt;
  opt.adjoint = adjoint_;
  apply_transport(*prob_, x, y, opt);
}

double AssembledSystem::bilinear(const SpeciesField& psi, const SpeciesField& v) const {
  SpeciesField y(prob_->g());
  apply(psi, y);
  return species_inner(*prob_, y, v);
}

DenseMatrix AssembledSystem::dense() const { return dense_bilinear(*prob_, adjoint_); }

FormBreakdown AssembledSystem::breakdown(const SpeciesField& psi, const SpeciesField& v) const {
  // Independent evaluation of the summation-by-parts split; its total equals
  // bilinear(psi, v) identically.
  const auto& prob = *prob_;
  const auto& g = prob.g();
  const auto& sp = g.spatial;
  const auto& en = g.energy;
  const int nn = g.n_dir(), nl = g.n_lev();
  const double vol = sp.voxel_volume();
  FormBreakdown out;

  // Trial-side field of the run direction: the adjoint form B*(psi*, v)
  // applies the adjoint stencils to psi*, so the Abel split swaps roles.
  for (int j = 0; j < 3; ++j) {
    // Streaming: -<psi, downwind-difference of v> + outflow product.
    for (int v_i = 0; v_i < g.n_vox(); ++v_i)
      for (int n = 0; n < nn; ++n) {
        const Vec3 omega = g.sphere.nodes[n];
        for (int a = 0; a < 3; ++a) {
          if (std::abs(omega[a]) <= 1e-12) continue;
          const double c = std::abs(omega[a]) / sp.spacing[a];
          int down_dir = omega[a] > 0.0 ? +1 : -1;  // downwind along +omega
          if (adjoint_) down_dir = -down_dir;
          const int dn = sp.neighbor(v_i, a, down_dir);
          if (dn < 0) continue;
          for (int l = 0; l < nl; ++l)
            out.streaming_transposed -= vol * g.sphere.weights[n] * en.weights[l] * c *
                                        psi[j][g.idx(v_i, n, l)] *
                                        (v[j][g.idx(dn, n, l)] - v[j][g.idx(v_i, n, l)]);
        }
      }
    const auto& entries = adjoint_ ? g.boundary.minus_entries : g.boundary.plus_entries;
    for (const auto& e : entries) {
      const int cell = g.boundary.faces[e.face].voxel;
      for (int l = 0; l < nl; ++l)
        out.gamma_plus += e.weight * en.weights[l] * psi[j][g.idx(cell, e.node, l)] *
                          v[j][g.idx(cell, e.node, l)];
    }

    if (j == kPhoton) {
      for (int v_i = 0; v_i < g.n_vox(); ++v_i)
        for (int n = 0; n < nn; ++n)
          for (int l = 0; l < nl; ++l) {
            const std::size_t i = g.idx(v_i, n, l);
            out.sigma_minus_k += vol * g.sphere.weights[n] * en.weights[l] *
                                 prob.sigma_of(j, v_i, l) * psi[j][i] * v[j][i];
          }
      continue;
    }

    // Energy: Abel split with d_l = wE(l) a_l / h~_l and c_l = wE(l) a_l / h_l.
    for (int v_i = 0; v_i < g.n_vox(); ++v_i) {
      auto dcoef = [&](int l) {
        const double ht = (l == 0) ? 0.5 * en.steps[1] : en.steps[l];
        return en.weights[l] * prob.a_of(j, v_i, l) / ht;
      };
      auto ccoef = [&](int l) { return en.weights[l] * prob.a_of(j, v_i, l) / en.steps[l]; };
      for (int n = 0; n < nn; ++n) {
        const double wn = vol * g.sphere.weights[n];
        if (!adjoint_) {
          for (int l = 0; l + 1 < nl; ++l)
            out.energy_transposed += wn * psi[j][g.idx(v_i, n, l)] *
                                     (ccoef(l + 1) * v[j][g.idx(v_i, n, l + 1)] -
                                      dcoef(l) * v[j][g.idx(v_i, n, l)]);
          out.endpoint_e0 -= wn * dcoef(nl - 1) * psi[j][g.idx(v_i, n, nl - 1)] *
                             v[j][g.idx(v_i, n, nl - 1)];
        } else {
          // B*(psi*, v): transposed roles; endpoint lands at E_m.
          for (int l = 0; l + 1 < nl; ++l)
            out.energy_transposed += wn * v[j][g.idx(v_i, n, l)] *
                                     (ccoef(l + 1) * psi[j][g.idx(v_i, n, l + 1)] -
                                      dcoef(l) * psi[j][g.idx(v_i, n, l)]);
          out.endpoint_e0 -= wn * dcoef(nl - 1) * psi[j][g.idx(v_i, n, nl - 1)] *
                             v[j][g.idx(v_i, n, nl - 1)];
        }
      }
    }

    // Angular: -<grad_S psi, b grad_S v> via the edge-weighted inner product.
    std::vector<double> ps(nn), vs(nn);
    for (int v_i = 0; v_i < g.n_vox(); ++v_i)
      for (int l = 0; l < nl; ++l) {
        for (int n = 0; n < nn; ++n) {
          ps[n] = psi[j][g.idx(v_i, n, l)];
          vs[n] = v[j][g.idx(v_i, n, l)];
        }
        out.angular -= vol * en.weights[l] * prob.b_of(j, v_i, l) * g.sphere.grad_inner(ps, vs);
      }

    for (int v_i = 0; v_i < g.n_vox(); ++v_i)
      for (int n = 0; n < nn; ++n)
        for (int l = 0; l < nl; ++l) {
          const std::size_t i = g.idx(v_i, n, l);
          out.sigma_minus_k += vol * g.sphere.weights[n] * en.weights[l] *
                               prob.sigma_of(j, v_i, l) * psi[j][i] * v[j][i];
        }
  }

  // Collision part of <psi, (Sigma - K^*) v> evaluated as -<K psi, v> in the
  // forward form and -<K^* psi, v> in the adjoint form.
  SpeciesField k(g);
  if (adjoint_)
    prob.collision.apply_adjoint(psi, k);
  else
    prob.collision.apply(psi, k);
  out.sigma_minus_k -= species_inner(prob, k, v);
  return out;
}

// ---------------------------------------------------------------------------
// Functionals

double LinearFunctional::operator()(const DiscreteField& v) const {
  const auto& g = prob->g();
  double s = species_inner(*prob, f, v.values);
  const BoundaryField tr = adjoint ? v.trace_plus(g) : v.trace_minus(g);
  s += t2_inner(g, adjoint, this->g, tr);
  return s;
}

double LinearFunctional::operator()(const SpeciesField& v) const {
  return (*this)(DiscreteField::from_values(prob->g(), v));
}

LinearFunctional functional_F(const TransportProblem& prob, SpeciesField f,
                              BoundaryField g_minus) {
  return LinearFunctional{&prob, false, std::move(f), std::move(g_minus)};
}

LinearFunctional functional_Fstar(const TransportProblem& prob, SpeciesField f_star,
                                  BoundaryField g_plus) {
  return LinearFunctional{&prob, true, std::move(f_star), std::move(g_plus)};
}

// ---------------------------------------------------------------------------
// Generalized Green identity residual

double green_residual(const TransportProblem& prob, const DiscreteField& psi,
                      const DiscreteField& psi_star) {
  const auto& g = prob.g();
  if (psi.values[0].size() != g.field_size() || psi_star.values[0].size() != g.field_size())
    throw std::invalid_argument("green_residual: field shape mismatch");

  ApplyOptions diff;
  diff.include_collision = false;
  diff.include_sigma = false;

  // P psi with the field's own ghost data.
  SpeciesField p_psi(g);
  diff.adjoint = false;
  apply_transport(prob, psi.values, p_psi, diff);
  const BoundaryField psi_minus = psi.trace_minus(g);
  std::array<std::vector<double>, 3> psi_em = {std::vector<double>{}, psi.endpoint_em(g, 1),
                                               psi.endpoint_em(g, 2)};
  GhostData gf;
  gf.boundary = &psi_minus;
  gf.slice = &psi_em;
  accumulate_ghost_terms(prob, false, gf, 1.0, p_psi);

  // P* psi* with its own ghost data.
  SpeciesField p_star(g);
  diff.adjoint = true;
  apply_transport(prob, psi_star.values, p_star, diff);
  const BoundaryField star_plus = psi_star.trace_plus(g);
  std::array<std::vector<double>, 3> star_e0 = {std::vector<double>{}, psi_star.endpoint_e0(g, 1),
                                                psi_star.endpoint_e0(g, 2)};
  GhostData ga;
  ga.boundary = &star_plus;
  ga.slice = &star_e0;
  accumulate_ghost_terms(prob, true, ga, 1.0, p_star);

  const double lhs = species_inner(prob, p_psi, psi_star.values) -
                     species_inner(prob, psi.values, p_star);

  // Boundary term: integral over Gamma of (omega . nu) psi psi*.
  const BoundaryField psi_plus = psi.trace_plus(g);
  const BoundaryField star_minus = psi_star.trace_minus(g);
  double boundary = t2_inner(g, true, psi_plus, star_plus) -
                    t2_inner(g, false, psi_minus, star_minus);

  // a-weighted endpoint terms at E_m and E_0 for the charged species.
  double endpoints = 0.0;
  for (int j = 1; j < 3; ++j) {
    const auto a_em = [&](int v) { return prob.a_of(j, v, 0); };
    const auto a_e0 = [&](int v) { return prob.a_of(j, v, g.n_lev() - 1); };
    const auto em_l = psi.endpoint_em(g, j);
    const auto em_r = psi_star.endpoint_em(g, j);
    const auto e0_l = psi.endpoint_e0(g, j);
    const auto e0_r = psi_star.endpoint_e0(g, j);
    for (int v = 0; v < g.n_vox(); ++v)
      for (int n = 0; n < g.n_dir(); ++n) {
        const std::size_t i = static_cast<std::size_t>(v) * g.n_dir() + n;
        const double w = g.spatial.voxel_volume() * g.sphere.weights[n];
        endpoints += w * (a_em(v) * em_l[i] * em_r[i] - a_e0(v) * e0_l[i] * e0_r[i]);
      }
  }
  return std::abs(lhs - boundary - endpoints);
}


void export_coordinate_text(const AssembledSystem& sys, const std::string& path,
                            double drop_tol) {
  const DenseMatrix m = sys.dense();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_coordinate_text: cannot write " + path);
  out.precision(17);
  out << "# row\tcol\tvalue  (" << m.rows() << " x " << m.cols() << ")\n";
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (std::abs(m(r, c)) > drop_tol) out << r << "\t" << c << "\t" << m(r, c) << "\n";
}

}  // namespace csda
