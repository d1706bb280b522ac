#include "csda/dose_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace csda {

namespace {

double neg_part(double a) { return 0.5 * (std::abs(a) - a); }

Region region_of(const SpatialGrid& sp, int active) { return sp.labels[sp.cell_of_active[active]]; }

double region_volume(const SpatialGrid& sp, Region r) {
  double m = 0.0;
  for (int v = 0; v < sp.n_active(); ++v)
    if (region_of(sp, v) == r) m += sp.voxel_volume();
  return m;
}


}  // namespace

StoppingPowers StoppingPowers::constant(const PhaseSpaceGrid& grid, std::array<double, 3> values) {
  StoppingPowers sp;
  const std::size_t n = static_cast<std::size_t>(grid.n_vox()) * grid.n_lev();
  for (int j = 0; j < 3; ++j) {
    if (values[j] < 0.0) throw std::invalid_argument("StoppingPowers: must be nonnegative");
    sp.s[j].assign(n, values[j]);
  }
  return sp;
}

std::vector<double> dose(const PhaseSpaceGrid& grid, const SpeciesField& psi,
                         const StoppingPowers& sp) {
  for (int j = 0; j < 3; ++j)
    if (psi[j].size() != grid.field_size() ||
        sp.s[j].size() != static_cast<std::size_t>(grid.n_vox()) * grid.n_lev())
      throw std::invalid_argument("dose: shape mismatch");
  std::vector<double> d(grid.n_vox(), 0.0);
  for (int j = 0; j < 3; ++j)
    for (int v = 0; v < grid.n_vox(); ++v) {
      double acc = 0.0;
      for (int n = 0; n < grid.n_dir(); ++n)
        for (int l = 0; l < grid.n_lev(); ++l)
          acc += sp.at(j, v, l, grid.n_lev()) * psi[j][grid.idx(v, n, l)] *
                 grid.sphere.weights[n] * grid.energy.weights[l];
      d[v] += acc;
    }
  return d;
}

void dose_adjoint(const PhaseSpaceGrid& grid, const StoppingPowers& sp,
                  std::span<const double> d, SpeciesField& out) {
  for (int j = 0; j < 3; ++j)
    for (int v = 0; v < grid.n_vox(); ++v)
      for (int n = 0; n < grid.n_dir(); ++n)
        for (int l = 0; l < grid.n_lev(); ++l)
          out[j][grid.idx(v, n, l)] = sp.at(j, v, l, grid.n_lev()) * d[v];
}

void Prescription::validate() const {
  if (dv_fraction < 0.0 || dv_fraction > 1.0)
    throw std::invalid_argument("Prescription: dose-volume fraction must lie in [0, 1]");
  if (c_t < 0 || c_c < 0 || c_n < 0 || c_dv < 0 || c_ad < 0 || c_sc < 0)
    throw std::invalid_argument("Prescription: weights must be nonnegative");
  if (eps <= 0.0) throw std::invalid_argument("Prescription: eps must be positive");
}

double smooth_heaviside(double t, double eps) { return 1.0 / (1.0 + std::exp(-t / eps)); }

double dvh_fraction(const SpatialGrid& spatial, std::span<const double> dose_field,
                    Region region, double level) {
  double m = 0.0, above = 0.0;
  for (int v = 0; v < spatial.n_active(); ++v) {
    if (region_of(spatial, v) != region) continue;
    m += spatial.voxel_volume();
    if (dose_field[v] >= level) above += spatial.voxel_volume();
  }
  if (m == 0.0) throw std::invalid_argument("dvh_fraction: empty region mask");
  return above / m;
}

namespace {

struct RegionMisfits {
  double t = 0.0, c = 0.0, n = 0.0;  // squared L2 misfits per region
};

RegionMisfits initializer_misfits(const SpatialGrid& sp, const Prescription& rx,
                                  std::span<const double> dose_field) {
  RegionMisfits m;
  for (int v = 0; v < sp.n_active(); ++v) {
    const double d = dose_field[v];
    const double vol = sp.voxel_volume();
    switch (region_of(sp, v)) {
      case Region::Target: m.t += vol * (rx.target_t - d) * (rx.target_t - d); break;
      case Region::Critical: m.c += vol * (rx.target_c - d) * (rx.target_c - d); break;
      case Region::Normal: m.n += vol * (rx.target_n - d) * (rx.target_n - d); break;
      case Region::Outside: break;
    }
  }
  return m;
}

double control_sq_norm(const TransportProblem& prob, const PlanState& plan) {
  if (plan.mode == ControlMode::Internal) return species_inner(prob, plan.f, plan.f);
  return t2_inner(prob.g(), false, plan.g, plan.g);
}

double control_negpart_sq_norm(const TransportProblem& prob, const PlanState& plan) {
  if (plan.mode == ControlMode::Internal) {
    SpeciesField neg = plan.f;
    for (auto& vec : neg.f)
      for (double& x : vec) x = neg_part(x);
    return species_inner(prob, neg, neg);
  }
  BoundaryField neg = plan.g;
  for (auto& vec : neg.g)
    for (double& x : vec) x = neg_part(x);
  return t2_inner(prob.g(), false, neg, neg);
}

}  // namespace

ObjectiveBreakdown objective_full(const TransportProblem& prob, const Prescription& rx,
                                  std::span<const double> dose_field, const PlanState& plan) {
  rx.validate();
  const auto& sp = prob.g().spatial;
  ObjectiveBreakdown out;
  for (int v = 0; v < sp.n_active(); ++v) {
    const double d = dose_field[v];
    const double vol = sp.voxel_volume();
    switch (region_of(sp, v)) {
      case Region::Target: out.j_t += vol * (rx.d0 - d) * (rx.d0 - d); break;
      case Region::Critical: {
        const double p = neg_part(rx.d_crit - d);
        out.j_c += vol * p * p;
        break;
      }
      case Region::Normal: {
        const double p = neg_part(rx.d_norm - d);
        out.j_n += vol * p * p;
        break;
      }
      case Region::Outside: break;
    }
  }
  if (rx.c_dv > 0.0) {
    const double mc = region_volume(sp, Region::Critical);
    if (mc == 0.0) throw std::invalid_argument("objective_full: dose-volume term on empty mask");
    double frac = 0.0;
    for (int v = 0; v < sp.n_active(); ++v)
      if (region_of(sp, v) == Region::Critical)
        frac += sp.voxel_volume() * smooth_heaviside(dose_field[v] - rx.dv_level, rx.eps);
    frac /= mc;
    const double p = neg_part(rx.dv_fraction - frac);
    out.j_dv = p * p;
  }
  out.j_ad = control_negpart_sq_norm(prob, plan);
  out.j_sc = control_sq_norm(prob, plan);
  out.total = rx.c_t * out.j_t + rx.c_c * out.j_c + rx.c_n * out.j_n + rx.c_dv * out.j_dv +
              rx.c_ad * out.j_ad + rx.c_sc * out.j_sc;
  return out;
}

ObjectiveBreakdown objective_initializer(const TransportProblem& prob, const Prescription& rx,
                                         std::span<const double> dose_field,
                                         const PlanState& plan) {
  rx.validate();
  const RegionMisfits m = initializer_misfits(prob.g().spatial, rx, dose_field);
  ObjectiveBreakdown out;
  out.j_t = m.t;
  out.j_c = m.c;
  out.j_n = m.n;
  out.j_sc = control_sq_norm(prob, plan);
  out.total = rx.c_t * out.j_t + rx.c_c * out.j_c + rx.c_n * out.j_n + rx.c_sc * out.j_sc;
  return out;
}

SpeciesField initializer_fstar(const TransportProblem& prob, const Prescription& rx,
                               const StoppingPowers& sp, std::span<const double> dose_field) {
  const auto& g = prob.g();
  std::vector<double> residual(g.n_vox(), 0.0);
  for (int v = 0; v < g.n_vox(); ++v) {
    const double d = dose_field[v];
    switch (region_of(g.spatial, v)) {
      case Region::Target: residual[v] = rx.c_t * (d - rx.target_t); break;
      case Region::Critical: residual[v] = rx.c_c * (d - rx.target_c); break;
      case Region::Normal: residual[v] = rx.c_n * (d - rx.target_n); break;
      case Region::Outside: break;
    }
  }
  SpeciesField fstar(g);
  dose_adjoint(g, sp, residual, fstar);
  return fstar;
}

namespace {

// One forward/adjoint pass at the given control; fills psi, psi*, dose.
void evaluate_pair(TransportProblem& prob, const Prescription& rx, const StoppingPowers& sp,
                   PlanState& plan, const SolverOptions& sopt) {
  const auto& g = prob.g();
  if (plan.mode == ControlMode::Internal) {
    prob.source = plan.f;
    prob.g_minus = BoundaryField::zeros(g, false);
  } else {
    prob.source = SpeciesField(g);
    prob.g_minus = plan.g;
  }
  prob.g_plus = BoundaryField::zeros(g, true);
  auto [psi, rep] = solve_forward(prob, sopt);
  plan.psi = std::move(psi);
  plan.dose_field = dose(g, plan.psi, sp);

  SpeciesField fstar = initializer_fstar(prob, rx, sp, plan.dose_field);
  for (auto& vec : fstar.f)
    for (double& x : vec) x = -x;
  prob.source = std::move(fstar);
  prob.g_minus = BoundaryField::zeros(g, false);
  auto [ps, rep2] = solve_adjoint(prob, sopt);
  plan.psi_star = std::move(ps);
}

KktReport kkt_from_state(const TransportProblem& prob, const Prescription& rx,
                         const PlanState& plan) {
  const auto& g = prob.g();
  KktReport k;
  if (plan.mode == ControlMode::Internal) {
    SpeciesField grad(g), gneg(g), fneg(g);
    double comp = 0.0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < grad[j].size(); ++i) {
        const double gr = -plan.psi_star[j][i] + rx.c_sc * plan.f[j][i];
        grad[j][i] = gr;
        gneg[j][i] = neg_part(gr);
        fneg[j][i] = neg_part(plan.f[j][i]);
      }
    comp = species_inner(prob, plan.f, grad);
    k.stationarity = species_norm(prob, gneg);
    k.complementarity = std::abs(comp);
    k.primal = species_norm(prob, fneg);
  } else {
    const BoundaryField trace = cell_trace(g, plan.psi_star, false);
    BoundaryField grad = plan.g, gneg = plan.g, cneg = plan.g;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < grad.g[j].size(); ++i) {
        const double gr = -trace.g[j][i] + rx.c_sc * plan.g.g[j][i];
        grad.g[j][i] = gr;
        gneg.g[j][i] = neg_part(gr);
        cneg.g[j][i] = neg_part(plan.g.g[j][i]);
      }
    k.stationarity = t2_norm(g, false, gneg);
    k.complementarity = std::abs(t2_inner(g, false, plan.g, grad));
    k.primal = t2_norm(g, false, cneg);
  }
  return k;
}

}  // namespace

BoundaryField gradient_external(TransportProblem& prob, const Prescription& rx,
                                const StoppingPowers& sp, const BoundaryField& g,
                                PlanState* plan_out, const SolverOptions& sopt) {
  PlanState plan;
  plan.mode = ControlMode::External;
  plan.g = g;
  evaluate_pair(prob, rx, sp, plan, sopt);
  const BoundaryField trace = cell_trace(prob.g(), plan.psi_star, false);
  BoundaryField grad = g;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < grad.g[j].size(); ++i)
      grad.g[j][i] = -2.0 * trace.g[j][i] + 2.0 * rx.c_sc * g.g[j][i];
  if (plan_out) {
    plan.objective = objective_initializer(prob, rx, plan.dose_field, plan);
    *plan_out = std::move(plan);
  }
  return grad;
}

SpeciesField gradient_internal(TransportProblem& prob, const Prescription& rx,
                               const StoppingPowers& sp, const SpeciesField& f,
                               PlanState* plan_out, const SolverOptions& sopt) {
  PlanState plan;
  plan.mode = ControlMode::Internal;
  plan.f = f;
  plan.g = BoundaryField::zeros(prob.g(), false);
  evaluate_pair(prob, rx, sp, plan, sopt);
  SpeciesField grad(prob.g());
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < grad[j].size(); ++i)
      grad[j][i] = -2.0 * plan.psi_star[j][i] + 2.0 * rx.c_sc * f[j][i];
  if (plan_out) {
    plan.objective = objective_initializer(prob, rx, plan.dose_field, plan);
    *plan_out = std::move(plan);
  }
  return grad;
}

namespace {

PlanState run_fixed_point(TransportProblem& prob, const Prescription& rx,
                          const StoppingPowers& sp, const FixedPointOptions& opt,
                          ControlMode mode) {
  rx.validate();
  if (!(rx.c_sc > 0.0))
    throw std::invalid_argument("optimize: the stabilizer weight c_sc must be positive");
  const auto& g = prob.g();
  PlanState plan;
  plan.mode = mode;
  plan.g = BoundaryField::zeros(g, false);
  plan.f = SpeciesField(g);

  double theta = opt.theta;
  double prev_step = std::numeric_limits<double>::infinity();
  int growth_streak = 0;

  for (int it = 1; it <= opt.max_iter; ++it) {
    evaluate_pair(prob, rx, sp, plan, opt.solver);
    double step = 0.0, size = 0.0;
    if (mode == ControlMode::Internal) {
      SpeciesField next(g);
      for (int j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < next[j].size(); ++i) {
          const double target = std::max(plan.psi_star[j][i], 0.0) / rx.c_sc;
          next[j][i] = (1.0 - theta) * plan.f[j][i] + theta * target;
        }
      SpeciesField diff(g);
      for (int j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < diff[j].size(); ++i)
          diff[j][i] = next[j][i] - plan.f[j][i];
      step = species_norm(prob, diff);
      plan.f = std::move(next);
      size = species_norm(prob, plan.f);
    } else {
      const BoundaryField trace = cell_trace(g, plan.psi_star, false);
      BoundaryField next = plan.g;
      for (int j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < next.g[j].size(); ++i) {
          double target = trace.g[j][i] / rx.c_sc;
          if (mode == ControlMode::External) target = std::max(target, 0.0);
          next.g[j][i] = (1.0 - theta) * plan.g.g[j][i] + theta * target;
        }
      BoundaryField diff = next;
      for (int j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < diff.g[j].size(); ++i) diff.g[j][i] -= plan.g.g[j][i];
      step = t2_norm(g, false, diff);
      plan.g = std::move(next);
      size = t2_norm(g, false, plan.g);
    }
    plan.step_history.push_back(step);
    plan.iterations = it;

    if (step > prev_step) {
      ++growth_streak;
      if (mode == ControlMode::LinearUnconstrained && growth_streak >= 10)
        throw std::runtime_error(
            "optimize_linear_unconstrained: diverging fixed point; reduce theta");
      theta *= 0.5;
    } else {
      growth_streak = 0;
    }
    prev_step = step;

    if (step <= opt.tol * std::max(size, 1e-300)) {
      plan.converged = true;
      break;
    }
  }
  if (!plan.converged)
    throw SolveFailure("optimize: fixed point did not converge within max_iter", SolveReport{});

  // Final consistency pass at the converged control.
  evaluate_pair(prob, rx, sp, plan, opt.solver);
  plan.objective = objective_initializer(prob, rx, plan.dose_field, plan);
  plan.kkt = kkt_from_state(prob, rx, plan);
  return plan;
}

}  // namespace

PlanState optimize_external(TransportProblem& prob, const Prescription& rx,
                            const StoppingPowers& sp, const FixedPointOptions& opt) {
  return run_fixed_point(prob, rx, sp, opt, ControlMode::External);
}

PlanState optimize_internal(TransportProblem& prob, const Prescription& rx,
                            const StoppingPowers& sp, const FixedPointOptions& opt) {
  return run_fixed_point(prob, rx, sp, opt, ControlMode::Internal);
}

PlanState optimize_linear_unconstrained(TransportProblem& prob, const Prescription& rx,
                                        const StoppingPowers& sp, const FixedPointOptions& opt) {
  return run_fixed_point(prob, rx, sp, opt, ControlMode::LinearUnconstrained);
}

KktReport kkt_residuals(TransportProblem& prob, const Prescription& rx, const StoppingPowers& sp,
                        PlanState& plan, const SolverOptions& sopt) {
  evaluate_pair(prob, rx, sp, plan, sopt);
  plan.kkt = kkt_from_state(prob, rx, plan);
  return plan.kkt;
}

std::pair<SpeciesField, SpeciesField> dense_linear_optimality(const TransportProblem& prob,
                                                              const Prescription& rx,
                                                              const StoppingPowers& sp) {
  const auto& g = prob.g();
  const std::size_t fs = g.field_size();
  const std::size_t n = 3 * fs;

  const DenseMatrix a_fwd = dense_operator(prob, false);
  const DenseMatrix a_adj = dense_operator(prob, true);

  // Boundary feedback: psi* cell values on Gamma- scaled by the stencil
  // coefficient feed the forward right-hand side.
  DenseMatrix bc(n, n);
  const int nl = g.n_lev();
  for (int j = 0; j < 3; ++j)
    for (std::size_t e = 0; e < g.boundary.minus_entries.size(); ++e) {
      const auto& entry = g.boundary.minus_entries[e];
      const auto& face = g.boundary.faces[entry.face];
      const double c = std::abs(g.sphere.nodes[entry.node][face.axis]) /
                       g.spatial.spacing[face.axis];
      for (int l = 0; l < nl; ++l) {
        const std::size_t i = j * fs + g.idx(face.voxel, entry.node, l);
        bc(i, i) += c / rx.c_sc;
      }
    }

  // Dose feedback sum_R c_R D* e_R D as a dense operator.
  DenseMatrix cd(n, n);
  {
    SpeciesField unit(g), tmp(g);
    for (std::size_t col = 0; col < n; ++col) {
      for (auto& vec : unit.f) std::fill(vec.begin(), vec.end(), 0.0);
      unit[col / fs][col % fs] = 1.0;
      std::vector<double> d = dose(g, unit, sp);
      for (int v = 0; v < g.n_vox(); ++v) {
        double cr = 0.0;
        switch (region_of(g.spatial, v)) {
          case Region::Target: cr = rx.c_t; break;
          case Region::Critical: cr = rx.c_c; break;
          case Region::Normal: cr = rx.c_n; break;
          case Region::Outside: break;
        }
        d[v] *= cr;
      }
      dose_adjoint(g, sp, d, tmp);
      const std::vector<double> flat = flatten(tmp);
      for (std::size_t r = 0; r < n; ++r) cd(r, col) = flat[r];
    }
  }

  // Right-hand side of the adjoint row: - sum_R c_R D* e_R (0 - d_R) =
  // + sum_R c_R D* e_R d_R.
  std::vector<double> rhs(2 * n, 0.0);
  {
    std::vector<double> d(g.n_vox(), 0.0);
    for (int v = 0; v < g.n_vox(); ++v) {
      switch (region_of(g.spatial, v)) {
        case Region::Target: d[v] = rx.c_t * rx.target_t; break;
        case Region::Critical: d[v] = rx.c_c * rx.target_c; break;
        case Region::Normal: d[v] = rx.c_n * rx.target_n; break;
        case Region::Outside: break;
      }
    }
    SpeciesField tmp(g);
    dose_adjoint(g, sp, d, tmp);
    const std::vector<double> flat = flatten(tmp);
    for (std::size_t r = 0; r < n; ++r) rhs[n + r] = flat[r];
  }

  DenseMatrix kkt(2 * n, 2 * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      kkt(r, c) = a_fwd(r, c);
      kkt(r, n + c) = -bc(r, c);
      kkt(n + r, c) = cd(r, c);
      kkt(n + r, n + c) = a_adj(r, c);
    }
  const std::vector<double> sol = lu_solve(kkt, rhs);
  SpeciesField psi(g), psi_star(g);
  unflatten(g, std::span<const double>(sol).subspan(0, n), psi);
  unflatten(g, std::span<const double>(sol).subspan(n, n), psi_star);
  return {psi, psi_star};
}


std::vector<double> full_objective_dose_residual(const TransportProblem& prob,
                                                 const Prescription& rx,
                                                 std::span<const double> dose_field) {
  const auto& sp = prob.g().spatial;
  std::vector<double> r(sp.n_active(), 0.0);
  double crit_vol = 0.0, frac = 0.0;
  if (rx.c_dv > 0.0) {
    for (int v = 0; v < sp.n_active(); ++v)
      if (region_of(sp, v) == Region::Critical) {
        crit_vol += sp.voxel_volume();
        frac += sp.voxel_volume() * smooth_heaviside(dose_field[v] - rx.dv_level, rx.eps);
      }
    if (crit_vol == 0.0)
      throw std::invalid_argument("full_objective_dose_residual: dose-volume term on empty mask");
    frac /= crit_vol;
  }
  const double gap_neg = neg_part(rx.dv_fraction - frac);
  for (int v = 0; v < sp.n_active(); ++v) {
    const double d = dose_field[v];
    switch (region_of(sp, v)) {
      case Region::Target:
        r[v] = rx.c_t * (d - rx.d0);
        break;
      case Region::Critical: {
        r[v] = rx.c_c * std::max(d - rx.d_crit, 0.0);
        if (rx.c_dv > 0.0) {
          const double h = smooth_heaviside(d - rx.dv_level, rx.eps);
          const double hprime = h * (1.0 - h) / rx.eps;
          r[v] += rx.c_dv * gap_neg * hprime / crit_vol;
        }
        break;
      }
      case Region::Normal:
        r[v] = rx.c_n * std::max(d - rx.d_norm, 0.0);
        break;
      case Region::Outside:
        break;
    }
  }
  return r;
}

BoundaryField gradient_external_full(TransportProblem& prob, const Prescription& rx,
                                     const StoppingPowers& sp, const BoundaryField& g,
                                     PlanState* plan_out, const SolverOptions& sopt) {
  const auto& grid = prob.g();
  PlanState plan;
  plan.mode = ControlMode::External;
  plan.g = g;
  prob.source = SpeciesField(grid);
  prob.g_minus = g;
  prob.g_plus = BoundaryField::zeros(grid, true);
  auto [psi, rep] = solve_forward(prob, sopt);
  plan.psi = std::move(psi);
  plan.dose_field = dose(grid, plan.psi, sp);

  SpeciesField fstar(grid);
  dose_adjoint(grid, sp, full_objective_dose_residual(prob, rx, plan.dose_field), fstar);
  for (auto& vec : fstar.f)
    for (double& x : vec) x = -x;
  prob.source = std::move(fstar);
  prob.g_minus = BoundaryField::zeros(grid, false);
  auto [star, rep2] = solve_adjoint(prob, sopt);
  plan.psi_star = std::move(star);

  const BoundaryField trace = cell_trace(grid, plan.psi_star, false);
  BoundaryField grad = g;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < grad.g[j].size(); ++i)
      grad.g[j][i] = -2.0 * trace.g[j][i] + 2.0 * rx.c_sc * g.g[j][i] -
                     2.0 * rx.c_ad * neg_part(g.g[j][i]);
  if (plan_out) {
    plan.objective = objective_full(prob, rx, plan.dose_field, plan);
    *plan_out = std::move(plan);
  }
  return grad;
}

PlanState refine_full_objective(TransportProblem& prob, const Prescription& rx,
                                const StoppingPowers& sp, PlanState start,
                                const RefineOptions& opt) {
  const auto& grid = prob.g();
  PlanState plan = std::move(start);
  plan.mode = ControlMode::External;

  auto eval = [&](const BoundaryField& g, PlanState& into) {
    into.g = g;
    prob.source = SpeciesField(grid);
    prob.g_minus = g;
    auto [psi, rep] = solve_forward(prob, opt.solver);
    into.psi = std::move(psi);
    into.dose_field = dose(grid, into.psi, sp);
    into.objective = objective_full(prob, rx, into.dose_field, into);
    return into.objective.total;
  };
  double j_cur = eval(plan.g, plan);

  double step = opt.step0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const BoundaryField grad = gradient_external_full(prob, rx, sp, plan.g, nullptr, opt.solver);
    bool improved = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      BoundaryField trial = plan.g;
      double move = 0.0;
      for (int j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < trial.g[j].size(); ++i) {
          trial.g[j][i] = std::max(plan.g.g[j][i] - step * grad.g[j][i], 0.0);
          move = std::max(move, std::abs(trial.g[j][i] - plan.g.g[j][i]));
        }
      PlanState cand = plan;
      const double j_trial = eval(trial, cand);
      if (j_trial < j_cur) {
        plan = std::move(cand);
        j_cur = j_trial;
        improved = true;
        step *= 1.5;
        break;
      }
      step *= 0.5;
      if (move <= opt.tol) break;
    }
    plan.iterations = it + 1;
    if (!improved) break;
  }
  plan.converged = true;
  // Restore psi* and KKT data at the final control.
  gradient_external_full(prob, rx, sp, plan.g, &plan, opt.solver);
  return plan;
}

}  // namespace csda
