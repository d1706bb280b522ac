#include "csda/transport_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace csda {

BoundaryField BoundaryField::zeros(const PhaseSpaceGrid& grid, bool plus_side) {
  BoundaryField b;
  const auto& entries = plus_side ? grid.boundary.plus_entries : grid.boundary.minus_entries;
  for (auto& v : b.g) v.assign(entries.size() * grid.n_lev(), 0.0);
  return b;
}

BoundaryField BoundaryField::constant(const PhaseSpaceGrid& grid, bool plus_side, int species,
                                      double value) {
  BoundaryField b = zeros(grid, plus_side);
  std::fill(b.g[species].begin(), b.g[species].end(), value);
  return b;
}

double t2_inner(const PhaseSpaceGrid& grid, bool plus_side, const BoundaryField& a,
                const BoundaryField& b) {
  const auto& entries = plus_side ? grid.boundary.plus_entries : grid.boundary.minus_entries;
  const int nl = grid.n_lev();
  double s = 0.0;
  for (int j = 0; j < 3; ++j)
    for (std::size_t e = 0; e < entries.size(); ++e)
      for (int l = 0; l < nl; ++l) {
        const std::size_t i = e * nl + l;
        s += entries[e].weight * grid.energy.weights[l] * a.g[j][i] * b.g[j][i];
      }
  return s;
}

double t2_norm(const PhaseSpaceGrid& grid, bool plus_side, const BoundaryField& a) {
  return std::sqrt(t2_inner(grid, plus_side, a, a));
}

// ---------------------------------------------------------------------------
// Problem assembly and hypothesis checks

void TransportProblem::validate_hypotheses() {
  data.validate(grid->spatial, grid->energy);
  for (int s = 0; s < 2; ++s) {
    const auto& m = coeff[s].margins;
    if (!(m.q1 > 0.0 && m.q2 > 0.0 && m.q3 > 0.0 && m.c0 > 0.0))
      throw std::runtime_error("hypothesis: coefficient margins q1, q2, q3, c0 must be positive");
  }
  if (!collision.kernel_set().validated)
    throw std::runtime_error("hypothesis: coupled kernel set not validated");
  const double c = margin_c();
  if (!(c > 0.0))
    throw std::runtime_error(
        "hypothesis: coupled coercivity margin (Sigma minus kernel row/column sums) is not "
        "positive");
  hypotheses_validated = true;
}

double TransportProblem::margin_c() const {
  return coercivity_margin(collision.kernel_set(), sigma, *grid, data);
}

double TransportProblem::margin_c_prime() const {
  const double c = margin_c();
  double q1 = std::min(coeff[0].margins.q1, coeff[1].margins.q1);
  double q2 = std::min(coeff[0].margins.q2, coeff[1].margins.q2);
  double q3 = std::min(coeff[0].margins.q3, coeff[1].margins.q3);
  return std::min({0.5 * q1, 0.5 * q3, q2, 0.5, c});
}

TransportProblem make_problem(std::shared_ptr<const PhaseSpaceGrid> grid,
                              const ProblemOptions& opt) {
  TransportProblem p;
  p.grid = grid;
  p.data = MollerData::constant(grid->spatial, opt.sigma0, opt.kappa);
  p.coeff[0] = build_coefficients(p.data, grid->spatial, grid->energy);
  p.coeff[1] = p.coeff[0];

  CoupledKernelSet set;
  auto separable = [&](double mag, KernelVariety v) {
    KernelEntry e;
    if (mag > 0.0) {
      e.variety = v;
      e.sep = make_uniform_separable(mag, *grid, v);
    }
    return e;
  };
  set.entry(kPhoton, kPhoton) = separable(opt.coupling_photon_self, KernelVariety::EnergyLocal);
  set.entry(kPhoton, kElectron) = separable(opt.coupling_photon_electron, KernelVariety::Full);
  set.entry(kPhoton, kPositron) = separable(opt.coupling_photon_positron, KernelVariety::Full);
  set.entry(kElectron, kPhoton) = separable(opt.coupling_electron_photon, KernelVariety::Full);
  set.entry(kPositron, kPhoton) = separable(opt.coupling_positron_photon, KernelVariety::Full);
  if (opt.moller_self_scatter) {
    auto restricted = std::make_shared<RestrictedKernel>(
        build_restricted_kernel(p.data, grid->energy));
    KernelEntry moller;
    moller.variety = KernelVariety::Curve;
    moller.curve = restricted;
    set.entry(kElectron, kElectron) = moller;
    set.entry(kPositron, kPositron) = moller;
  }
  set.validate(*grid, p.data);
  p.collision = CollisionOperator(*grid, set, p.data, opt.n_s);

  std::array<const CoefficientField*, 3> coeffs = {nullptr, &p.coeff[0], &p.coeff[1]};
  p.sigma = build_default_sigma(p.collision.kernel_set(), coeffs, *grid, p.data, opt.sigma_margin);

  p.source = SpeciesField(*grid);
  p.g_minus = BoundaryField::zeros(*grid, false);
  p.g_plus = BoundaryField::zeros(*grid, true);
  p.validate_hypotheses();
  return p;
}

// ---------------------------------------------------------------------------
// Operator application

namespace {

// Streaming term, zero-data upwind. Forward: upwind along +omega; adjoint:
// upwind along -omega. Either way the coefficient per axis is |omega_a|/h_a.
void add_streaming(const TransportProblem& prob, int j, bool adjoint, const SpeciesField& x,
                   SpeciesField& y) {
  const auto& g = prob.g();
  const auto& sp = g.spatial;
  const int nn = g.n_dir(), nl = g.n_lev();
  for (int v = 0; v < g.n_vox(); ++v) {
    for (int n = 0; n < nn; ++n) {
      const Vec3 omega = g.sphere.nodes[n];
      double diag = 0.0;
      int up[3] = {-1, -1, -1};
      double coef[3] = {0.0, 0.0, 0.0};
      for (int a = 0; a < 3; ++a) {
        const double w = omega[a];
        if (std::abs(w) <= 1e-12) continue;
        const double c = std::abs(w) / sp.spacing[a];
        diag += c;
        int dir = w > 0.0 ? -1 : +1;  // upwind neighbor along +omega
        if (adjoint) dir = -dir;      // upwind along -omega
        up[a] = sp.neighbor(v, a, dir);
        coef[a] = c;
      }
      for (int l = 0; l < nl; ++l) {
        double acc = diag * x[j][g.idx(v, n, l)];
        for (int a = 0; a < 3; ++a)
          if (up[a] >= 0) acc -= coef[a] * x[j][g.idx(up[a], n, l)];
        y[j][g.idx(v, n, l)] += acc;
      }
    }
  }
}

// Energy advection, zero-data. Forward marches from E_m down (level index
// increasing); the initial-value ghost sits half a step above E_m. Adjoint
// rows are the exact W-transpose, with trapezoid weight ratios.
void add_energy(const TransportProblem& prob, int j, bool adjoint, const SpeciesField& x,
                SpeciesField& y) {
  const auto& g = prob.g();
  const auto& en = g.energy;
  const int nn = g.n_dir(), nl = g.n_lev();
  for (int v = 0; v < g.n_vox(); ++v) {
    for (int n = 0; n < nn; ++n) {
      for (int l = 0; l < nl; ++l) {
        const std::size_t i = g.idx(v, n, l);
        const double h_tilde = (l == 0) ? 0.5 * en.steps[1] : en.steps[l];
        const double a_l = prob.a_of(j, v, l);
        if (!adjoint) {
          double acc = -a_l / h_tilde * x[j][i];
          if (l > 0) acc += a_l / en.steps[l] * x[j][g.idx(v, n, l - 1)];
          y[j][i] += acc;
        } else {
          double acc = -a_l / h_tilde * x[j][i];
          if (l + 1 < nl) {
            const double a_next = prob.a_of(j, v, l + 1);
            acc += en.weights[l + 1] * a_next / (en.weights[l] * en.steps[l + 1]) *
                   x[j][g.idx(v, n, l + 1)];
          }
          y[j][i] += acc;
        }
      }
    }
  }
}

void add_angular(const TransportProblem& prob, int j, const SpeciesField& x, SpeciesField& y) {
  const auto& g = prob.g();
  const int nn = g.n_dir(), nl = g.n_lev();
  std::vector<double> slice(nn), lb(nn);
  for (int v = 0; v < g.n_vox(); ++v) {
    for (int l = 0; l < nl; ++l) {
      const double b = prob.b_of(j, v, l);
      for (int n = 0; n < nn; ++n) slice[n] = x[j][g.idx(v, n, l)];
      g.sphere.apply_lb(slice, lb);
      for (int n = 0; n < nn; ++n) y[j][g.idx(v, n, l)] += b * lb[n];
    }
  }
}

}  // namespace

void apply_transport(const TransportProblem& prob, const SpeciesField& x, SpeciesField& y,
                     const ApplyOptions& opt) {
  const auto& g = prob.g();
  for (int j = 0; j < 3; ++j) std::fill(y[j].begin(), y[j].end(), 0.0);

  for (int j = 0; j < 3; ++j) {
    add_streaming(prob, j, opt.adjoint, x, y);
    if (j != kPhoton) {
      add_energy(prob, j, opt.adjoint, x, y);
      add_angular(prob, j, x, y);
    }
    if (opt.include_sigma) {
      for (int v = 0; v < g.n_vox(); ++v)
        for (int n = 0; n < g.n_dir(); ++n)
          for (int l = 0; l < g.n_lev(); ++l) {
            const std::size_t i = g.idx(v, n, l);
            y[j][i] += prob.sigma_of(j, v, l) * x[j][i];
          }
    }
  }
  if (opt.include_collision) {
    SpeciesField k(g);
    if (opt.adjoint)
      prob.collision.apply_adjoint(x, k);
    else
      prob.collision.apply(x, k);
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < k[j].size(); ++i) y[j][i] -= k[j][i];
  }
}

void accumulate_ghost_terms(const TransportProblem& prob, bool adjoint, const GhostData& data,
                            double scale, SpeciesField& out) {
  const auto& g = prob.g();
  const int nl = g.n_lev();
  // Streaming ghosts: inflow faces of the run direction.
  if (data.boundary) {
    const auto& entries = adjoint ? g.boundary.plus_entries : g.boundary.minus_entries;
    for (int j = 0; j < 3; ++j) {
      for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto& face = g.boundary.faces[entries[e].face];
        const double c = std::abs(g.sphere.nodes[entries[e].node][face.axis]) /
                         g.spatial.spacing[face.axis];
        for (int l = 0; l < nl; ++l) {
          const double gval = data.boundary->g[j][e * nl + l];
          if (gval == 0.0) continue;
          // A_with_data x = A x - c * ghost at the adjacent cell.
          out[j][g.idx(face.voxel, entries[e].node, l)] -= scale * c * gval;
        }
      }
    }
  }
  // Energy ghosts for charged species: E_m slice (forward) or E_0 (adjoint).
  if (data.slice) {
    for (int j = 1; j < 3; ++j) {
      const auto& sl = (*data.slice)[j];
      if (sl.empty()) continue;
      for (int v = 0; v < g.n_vox(); ++v)
        for (int n = 0; n < g.n_dir(); ++n) {
          const double gval = sl[static_cast<std::size_t>(v) * g.n_dir() + n];
          if (gval == 0.0) continue;
          if (!adjoint) {
            const double h_tilde = 0.5 * g.energy.steps[1];
            out[j][g.idx(v, n, 0)] += scale * prob.a_of(j, v, 0) / h_tilde * gval;
          } else {
            const int l = nl - 1;
            out[j][g.idx(v, n, l)] += scale * prob.a_of(j, v, l) / g.energy.steps[l] * gval;
          }
        }
    }
  }
}

SpeciesField assemble_rhs(const TransportProblem& prob, bool adjoint) {
  const auto& g = prob.g();
  SpeciesField rhs(g);
  for (int j = 0; j < 3; ++j) rhs[j] = prob.source[j];
  GhostData ghosts;
  ghosts.boundary = adjoint ? &prob.g_plus : &prob.g_minus;
  accumulate_ghost_terms(prob, adjoint, ghosts, -1.0, rhs);
  return rhs;
}

BoundaryField cell_trace(const PhaseSpaceGrid& grid, const SpeciesField& x, bool plus_side) {
  BoundaryField b = BoundaryField::zeros(grid, plus_side);
  const auto& entries = plus_side ? grid.boundary.plus_entries : grid.boundary.minus_entries;
  const int nl = grid.n_lev();
  for (int j = 0; j < 3; ++j)
    for (std::size_t e = 0; e < entries.size(); ++e)
      for (int l = 0; l < nl; ++l)
        b.g[j][e * nl + l] = x[j][grid.idx(grid.boundary.faces[entries[e].face].voxel,
                                           entries[e].node, l)];
  return b;
}

double species_inner(const TransportProblem& prob, const SpeciesField& a, const SpeciesField& b) {
  const auto& g = prob.g();
  const double vol = g.spatial.voxel_volume();
  double s = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int v = 0; v < g.n_vox(); ++v)
      for (int n = 0; n < g.n_dir(); ++n) {
        double se = 0.0;
        const double* pa = &a[j][g.idx(v, n, 0)];
        const double* pb = &b[j][g.idx(v, n, 0)];
        for (int l = 0; l < g.n_lev(); ++l) se += g.energy.weights[l] * pa[l] * pb[l];
        s += vol * g.sphere.weights[n] * se;
      }
  return s;
}

double species_norm(const TransportProblem& prob, const SpeciesField& a) {
  return std::sqrt(species_inner(prob, a, a));
}

std::vector<double> flatten(const SpeciesField& x) {
  std::vector<double> v;
  v.reserve(x[0].size() * 3);
  for (int j = 0; j < 3; ++j) v.insert(v.end(), x[j].begin(), x[j].end());
  return v;
}

void unflatten(const PhaseSpaceGrid& grid, std::span<const double> v, SpeciesField& x) {
  const std::size_t fs = grid.field_size();
  for (int j = 0; j < 3; ++j)
    std::copy(v.begin() + j * fs, v.begin() + (j + 1) * fs, x[j].begin());
}

DenseMatrix dense_operator(const TransportProblem& prob, bool adjoint, const ApplyOptions* op) {
  const auto& g = prob.g();
  const std::size_t n = 3 * g.field_size();
  ApplyOptions opt;
  if (op) opt = *op;
  opt.adjoint = adjoint;
  DenseMatrix m(n, n);
  SpeciesField e(g), y(g);
  for (std::size_t c = 0; c < n; ++c) {
    for (int j = 0; j < 3; ++j) std::fill(e[j].begin(), e[j].end(), 0.0);
    e[c / g.field_size()][c % g.field_size()] = 1.0;
    apply_transport(prob, e, y, opt);
    const std::vector<double> col = flatten(y);
    for (std::size_t r = 0; r < n; ++r) m(r, c) = col[r];
  }
  return m;
}

DenseMatrix dense_bilinear(const TransportProblem& prob, bool adjoint) {
  DenseMatrix m = dense_operator(prob, adjoint, nullptr);
  const auto& g = prob.g();
  const std::vector<double> wq = g.quadrature_weights();
  const std::size_t fs = g.field_size();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double w = wq[r % fs];
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= w;
  }
  return m;
}

}  // namespace csda
