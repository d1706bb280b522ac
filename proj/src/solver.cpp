#include "csda/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace csda {

namespace {

// Voxel orderings that make the per-direction streaming matrices triangular.
std::vector<std::vector<int>> sweep_orders(const PhaseSpaceGrid& g, bool adjoint) {
  std::vector<std::vector<int>> orders(g.n_dir());
  std::vector<double> key(g.n_vox());
  for (int n = 0; n < g.n_dir(); ++n) {
    Vec3 omega = g.sphere.nodes[n];
    if (adjoint) omega = omega * -1.0;
    for (int v = 0; v < g.n_vox(); ++v) {
      const auto& c = g.spatial.coords_of_active[v];
      const Vec3 x = g.spatial.cell_center(c[0], c[1], c[2]);
      key[v] = dot(omega, x);
    }
    orders[n].resize(g.n_vox());
    std::iota(orders[n].begin(), orders[n].end(), 0);
    std::stable_sort(orders[n].begin(), orders[n].end(),
                     [&](int a, int b) { return key[a] < key[b]; });
  }
  return orders;
}

struct LocalSolver {
  const TransportProblem& prob;
  bool adjoint;
  std::vector<std::vector<int>> orders;
  double inner_tol;
  int inner_max_iter;

  LocalSolver(const TransportProblem& p, bool adj, double itol, int imax)
      : prob(p), adjoint(adj), orders(sweep_orders(p.g(), adj)), inner_tol(itol),
        inner_max_iter(imax) {}

  // Upwind neighbor ids and coefficients for the run direction.
  void stencil(int v, int n, int up[3], double coef[3], double& diag) const {
    const auto& g = prob.g();
    const Vec3 omega = g.sphere.nodes[n];
    diag = 0.0;
    for (int a = 0; a < 3; ++a) {
      up[a] = -1;
      coef[a] = 0.0;
      if (std::abs(omega[a]) <= 1e-12) continue;
      const double c = std::abs(omega[a]) / g.spatial.spacing[a];
      diag += c;
      int dir = omega[a] > 0.0 ? -1 : +1;
      if (adjoint) dir = -dir;
      up[a] = g.spatial.neighbor(v, a, dir);
      coef[a] = c;
    }
  }

  void solve_photon(const SpeciesField& src, SpeciesField& x) const {
    const auto& g = prob.g();
    parallel_for(g.n_dir(), [&](int n) {
      int up[3];
      double coef[3], sdiag;
      for (int v : orders[n]) {
        stencil(v, n, up, coef, sdiag);
        for (int l = 0; l < g.n_lev(); ++l) {
          double rhs = src[kPhoton][g.idx(v, n, l)];
          for (int a = 0; a < 3; ++a)
            if (up[a] >= 0) rhs += coef[a] * x[kPhoton][g.idx(up[a], n, l)];
          x[kPhoton][g.idx(v, n, l)] = rhs / (sdiag + prob.sigma_of(kPhoton, v, l));
        }
      }
    });
  }

  // One implicit level system over (vox, node) for a charged species.
  void solve_level(int j, int l, std::span<const double> rhs, std::span<double> x) const {
    const auto& g = prob.g();
    const int nn = g.n_dir();
    const std::size_t m = static_cast<std::size_t>(g.n_vox()) * nn;
    const double h_tilde = (l == 0) ? 0.5 * g.energy.steps[1] : g.energy.steps[l];

    auto op = [&](std::span<const double> in, std::span<double> out) {
      std::vector<double> slice(nn), lb(nn);
      int up[3];
      double coef[3], sdiag;
      for (int v = 0; v < g.n_vox(); ++v) {
        const double zero_order = -prob.a_of(j, v, l) / h_tilde + prob.sigma_of(j, v, l);
        const double b = prob.b_of(j, v, l);
        for (int n = 0; n < nn; ++n) slice[n] = in[static_cast<std::size_t>(v) * nn + n];
        g.sphere.apply_lb(slice, lb);
        for (int n = 0; n < nn; ++n) {
          stencil(v, n, up, coef, sdiag);
          double acc = (sdiag + zero_order) * in[static_cast<std::size_t>(v) * nn + n] +
                       b * lb[n];
          for (int a = 0; a < 3; ++a)
            if (up[a] >= 0) acc -= coef[a] * in[static_cast<std::size_t>(up[a]) * nn + n];
          out[static_cast<std::size_t>(v) * nn + n] = acc;
        }
      }
    };

    std::vector<double> diag(m);
    {
      int up[3];
      double coef[3], sdiag;
      for (int v = 0; v < g.n_vox(); ++v) {
        const double zero_order = -prob.a_of(j, v, l) / h_tilde + prob.sigma_of(j, v, l);
        const double b = prob.b_of(j, v, l);
        for (int n = 0; n < nn; ++n) {
          stencil(v, n, up, coef, sdiag);
          double lb_diag = 0.0;
          for (const auto& [col, w] : g.sphere.lap_rows[n])
            if (col == n) lb_diag = w / g.sphere.weights[n];
          diag[static_cast<std::size_t>(v) * nn + n] = sdiag + zero_order + b * lb_diag;
        }
      }
    }

    std::fill(x.begin(), x.end(), 0.0);
    const KrylovResult kr = bicgstab(op, rhs, diag, x, inner_tol, inner_max_iter);
    if (!kr.converged && kr.residual > 1e-8)
      throw std::runtime_error("solve_level: inner Krylov iteration failed to converge");
  }

  void solve_charged(int j, const SpeciesField& src, SpeciesField& x) const {
    const auto& g = prob.g();
    const int nn = g.n_dir(), nl = g.n_lev();
    const std::size_t m = static_cast<std::size_t>(g.n_vox()) * nn;
    std::vector<double> rhs(m), xl(m);
    if (!adjoint) {
      for (int l = 0; l < nl; ++l) {
        for (int v = 0; v < g.n_vox(); ++v)
          for (int n = 0; n < nn; ++n) {
            double r = src[j][g.idx(v, n, l)];
            if (l > 0)
              r += -prob.a_of(j, v, l) / g.energy.steps[l] * x[j][g.idx(v, n, l - 1)];
            rhs[static_cast<std::size_t>(v) * nn + n] = r;
          }
        solve_level(j, l, rhs, xl);
        for (int v = 0; v < g.n_vox(); ++v)
          for (int n = 0; n < nn; ++n)
            x[j][g.idx(v, n, l)] = xl[static_cast<std::size_t>(v) * nn + n];
      }
    } else {
      for (int l = nl - 1; l >= 0; --l) {
        for (int v = 0; v < g.n_vox(); ++v)
          for (int n = 0; n < nn; ++n) {
            double r = src[j][g.idx(v, n, l)];
            if (l + 1 < nl)
              r += -g.energy.weights[l + 1] * prob.a_of(j, v, l + 1) /
                   (g.energy.weights[l] * g.energy.steps[l + 1]) * x[j][g.idx(v, n, l + 1)];
            rhs[static_cast<std::size_t>(v) * nn + n] = r;
          }
        solve_level(j, l, rhs, xl);
        for (int v = 0; v < g.n_vox(); ++v)
          for (int n = 0; n < nn; ++n)
            x[j][g.idx(v, n, l)] = xl[static_cast<std::size_t>(v) * nn + n];
      }
    }
  }

  void solve_all(const SpeciesField& src, SpeciesField& x) const {
    solve_photon(src, x);
    solve_charged(kElectron, src, x);
    solve_charged(kPositron, src, x);
  }
};

std::pair<SpeciesField, SolveReport> run_solve(const TransportProblem& prob, bool adjoint,
                                               const SolverOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& g = prob.g();
  if (!prob.hypotheses_validated)
    throw std::runtime_error("solve: hypothesis validation has not run");
  if (!(opt.tol > 0.0)) throw std::invalid_argument("solve: tol must be positive");

  SpeciesField psi(g);
  SolveReport rep;
  {
    // Compatibility check: the initial-slice level of the march direction.
    const int l0 = adjoint ? g.n_lev() - 1 : 0;
    const auto& bdata = adjoint ? prob.g_plus : prob.g_minus;
    const auto& entries = adjoint ? g.boundary.plus_entries : g.boundary.minus_entries;
    for (int j = 1; j < 3 && !rep.compatibility_warning; ++j)
      for (std::size_t e = 0; e < entries.size(); ++e)
        if (bdata.g[j][e * g.n_lev() + l0] != 0.0) {
          rep.compatibility_warning = true;
          break;
        }
  }
  const SpeciesField rhs = assemble_rhs(prob, adjoint);
  const double rhs_norm = species_norm(prob, rhs);
  if (rhs_norm == 0.0) {
    rep.converged = true;
    return {psi, rep};
  }

  LocalSolver local(prob, adjoint, std::max(opt.inner_tol_factor * opt.tol, 1e-14),
                    opt.inner_max_iter);
  ApplyOptions full;
  full.adjoint = adjoint;

  SpeciesField coupling(g), src(g), ax(g);
  // Block Gauss-Seidel over species in cascade order: the photon field used
  // by the charged solves inside one outer pass is the freshly updated one.
  for (int it = 1; it <= opt.max_iter; ++it) {
    if (adjoint)
      prob.collision.apply_adjoint(psi, coupling);
    else
      prob.collision.apply(psi, coupling);
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < src[j].size(); ++i) src[j][i] = rhs[j][i] + coupling[j][i];
    local.solve_photon(src, psi);
    // Refresh the coupling into the charged species with the new photon field.
    if (adjoint)
      prob.collision.apply_adjoint(psi, coupling);
    else
      prob.collision.apply(psi, coupling);
    for (int j = 1; j < 3; ++j)
      for (std::size_t i = 0; i < src[j].size(); ++i) src[j][i] = rhs[j][i] + coupling[j][i];
    local.solve_charged(kElectron, src, psi);
    local.solve_charged(kPositron, src, psi);

    apply_transport(prob, psi, ax, full);
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < ax[j].size(); ++i) ax[j][i] -= rhs[j][i];
    rep.iterations = it;
    rep.residual = species_norm(prob, ax) / rhs_norm;
    rep.residual_history.push_back(rep.residual);
    if (rep.residual <= opt.tol) {
      rep.converged = true;
      break;
    }
  }

  for (int j = 0; j < 3; ++j) {
    SpeciesField one(g);
    one[j] = psi[j];
    rep.flux_norms[j] = species_norm(prob, one);
  }
  const BoundaryField outflow = cell_trace(g, psi, !adjoint);
  rep.outflow_norm = t2_norm(g, !adjoint, outflow);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!rep.converged && opt.throw_on_failure) {
    std::string hist = "solve: source iteration did not converge; residual history:";
    for (double r : rep.residual_history) hist += " " + std::to_string(r);
    throw SolveFailure(hist, rep);
  }
  return {psi, rep};
}

}  // namespace

std::pair<SpeciesField, SolveReport> solve_forward(const TransportProblem& prob,
                                                   const SolverOptions& opt) {
  return run_solve(prob, false, opt);
}

std::pair<SpeciesField, SolveReport> solve_adjoint(const TransportProblem& prob,
                                                   const SolverOptions& opt) {
  return run_solve(prob, true, opt);
}

double apriori_ratio(const TransportProblem& prob, const SpeciesField& psi,
                     const SpeciesField& f, const BoundaryField& g, bool* zero_data) {
  const auto& grid = prob.g();
  const double data_norm = species_norm(prob, f) + t2_norm(grid, false, g);
  if (data_norm == 0.0) {
    if (zero_data) *zero_data = true;
    return 0.0;
  }
  if (zero_data) *zero_data = false;
  const DiscreteField field = DiscreteField::from_forward_solution(grid, psi, g);
  return norm_H(prob, field) / data_norm;
}

SpeciesField dense_solve(const TransportProblem& prob, bool adjoint) {
  const auto& g = prob.g();
  const DenseMatrix a = dense_operator(prob, adjoint);
  const SpeciesField rhs = assemble_rhs(prob, adjoint);
  const std::vector<double> x = lu_solve(a, flatten(rhs));
  SpeciesField out(g);
  unflatten(g, x, out);
  return out;
}

}  // namespace csda
