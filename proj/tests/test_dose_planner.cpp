#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "csda/dose_planner.hpp"

using namespace csda;

namespace {
constexpr double kFourPi = 4.0 * std::numbers::pi;

std::vector<Region> three_region_labels(std::array<int, 3> dims) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<Region> labels(n, Region::Normal);
  auto at = [&](int i, int j, int k) -> Region& {
    return labels[(static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i];
  };
  for (int j = 0; j < dims[1]; ++j)
    for (int i = 0; i < dims[0]; ++i) at(i, j, 0) = Region::Critical;
  for (int k = dims[2] / 2; k < dims[2]; ++k)
    for (int j = dims[1] / 3; j < 2 * dims[1] / 3 + 1; ++j)
      for (int i = dims[0] / 3; i < 2 * dims[0] / 3 + 1; ++i) at(i, j, k) = Region::Target;
  return labels;
}

std::shared_ptr<PhaseSpaceGrid> phantom_grid(std::array<int, 3> dims, int sphere_level,
                                             int levels) {
  return std::make_shared<PhaseSpaceGrid>(
      SpatialGrid::box({0, 0, 0}, {1.0 / dims[0], 1.0 / dims[1], 1.0 / dims[2]}, dims,
                       three_region_labels(dims)),
      build_sphere_grid(sphere_level), EnergyGrid::uniform(8.0, 1.5, levels));
}

Prescription toy_rx() {
  Prescription rx;
  rx.d0 = 1.0;
  rx.d_crit = 0.4;
  rx.d_norm = 0.7;
  rx.target_t = 1.0;
  rx.target_c = 0.0;
  rx.target_n = 0.0;
  rx.dv_level = 0.4;
  rx.dv_fraction = 0.3;
  rx.eps = 0.02 * rx.dv_level;
  rx.c_sc = 1.0;
  return rx;
}

}  // namespace

TEST_CASE("dose operator: zero field, constant field, adjoint identity") {
  auto grid = phantom_grid({3, 3, 2}, 1, 4);
  const auto& g = *grid;
  StoppingPowers sp = StoppingPowers::constant(g, {0.0, 2.0, 0.0});

  CHECK(dose(g, SpeciesField(g), sp) == std::vector<double>(g.n_vox(), 0.0));

  SpeciesField psi(g);
  std::fill(psi[kElectron].begin(), psi[kElectron].end(), 3.0);
  const std::vector<double> d = dose(g, psi, sp);
  const double expect = 3.0 * 2.0 * kFourPi * g.energy.length();
  for (double x : d) CHECK(x == doctest::Approx(expect).epsilon(1e-6));

  Rng rng(4);
  StoppingPowers sp2 = StoppingPowers::constant(g, {0.5, 1.5, 0.7});
  for (int trial = 0; trial < 20; ++trial) {
    SpeciesField a(g);
    std::vector<double> w(g.n_vox());
    for (int j = 0; j < 3; ++j)
      for (auto& x : a[j]) x = rng.normal();
    for (auto& x : w) x = rng.normal();
    const std::vector<double> da = dose(g, a, sp2);
    double lhs = 0.0;
    for (int v = 0; v < g.n_vox(); ++v) lhs += g.spatial.voxel_volume() * da[v] * w[v];
    SpeciesField dstar(g);
    dose_adjoint(g, sp2, w, dstar);
    double rhs = 0.0;
    for (int j = 0; j < 3; ++j)
      for (int v = 0; v < g.n_vox(); ++v)
        for (int n = 0; n < g.n_dir(); ++n)
          for (int l = 0; l < g.n_lev(); ++l)
            rhs += g.spatial.voxel_volume() * g.sphere.weights[n] * g.energy.weights[l] *
                   a[j][g.idx(v, n, l)] * dstar[j][g.idx(v, n, l)];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("dvh_fraction: saturation, zero, straddle, empty mask") {
  auto grid = phantom_grid({4, 4, 2}, 0, 3);
  const auto& sp = grid->spatial;
  std::vector<double> d(sp.n_active(), 2.0);
  CHECK(dvh_fraction(sp, d, Region::Target, 1.0) == 1.0);
  CHECK(dvh_fraction(sp, d, Region::Target, 3.0) == 0.0);

  // Half the target above the level.
  int count = 0, total = 0;
  for (int v = 0; v < sp.n_active(); ++v)
    if (sp.labels[sp.cell_of_active[v]] == Region::Target) ++total;
  for (int v = 0; v < sp.n_active(); ++v)
    if (sp.labels[sp.cell_of_active[v]] == Region::Target) {
      d[v] = (count < total / 2) ? 2.0 : 0.0;
      ++count;
    }
  CHECK(dvh_fraction(sp, d, Region::Target, 1.0) ==
        doctest::Approx(static_cast<double>(total / 2) / total));

  std::vector<Region> no_crit(sp.labels.size(), Region::Normal);
  const SpatialGrid flat = SpatialGrid::box(sp.origin, sp.spacing, sp.dims, no_crit);
  std::vector<double> d2(flat.n_active(), 1.0);
  CHECK_THROWS_AS(dvh_fraction(flat, d2, Region::Critical, 0.5), std::invalid_argument);
}

TEST_CASE("objective_full: inactive penalties, smoothed dose-volume midpoint") {
  auto grid = phantom_grid({4, 4, 2}, 0, 3);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  Prescription rx = toy_rx();
  rx.c_dv = 1.0;

  PlanState plan;
  plan.mode = ControlMode::External;
  plan.g = BoundaryField::zeros(*grid, false);
  plan.f = SpeciesField(*grid);

  // Dose exactly d0 in the target, zero elsewhere: all penalties inactive
  // except the dose-volume term, which sits far below its cap.
  std::vector<double> d(grid->n_vox(), 0.0);
  for (int v = 0; v < grid->n_vox(); ++v)
    if (grid->spatial.labels[grid->spatial.cell_of_active[v]] == Region::Target) d[v] = rx.d0;
  ObjectiveBreakdown ob = objective_full(prob, rx, d, plan);
  CHECK(ob.j_t == 0.0);
  CHECK(ob.j_c == 0.0);
  CHECK(ob.j_n == 0.0);
  CHECK(ob.j_ad == 0.0);
  CHECK(ob.j_sc == 0.0);
  CHECK(ob.j_dv == 0.0);  // fraction ~ 0 <= v_C, negative part vanishes
  CHECK(ob.total == 0.0);

  // Uniform dose exactly at the dose-volume level: H_eps contributes 1/2.
  std::fill(d.begin(), d.end(), rx.dv_level);
  rx.dv_fraction = 0.3;
  ob = objective_full(prob, rx, d, plan);
  CHECK(ob.j_dv == doctest::Approx(0.04).epsilon(1e-12));  // ((0.3 - 0.5)_-)^2

  // Negative-part spot values through the critical-region term.
  std::fill(d.begin(), d.end(), 0.0);
  for (int v = 0; v < grid->n_vox(); ++v)
    if (grid->spatial.labels[grid->spatial.cell_of_active[v]] == Region::Critical)
      d[v] = rx.d_crit + 2.0;  // (d_crit - d)_- = 2
  rx.c_dv = 0.0;
  ob = objective_full(prob, rx, d, plan);
  double crit_vol = 0.0;
  for (int v = 0; v < grid->n_vox(); ++v)
    if (grid->spatial.labels[grid->spatial.cell_of_active[v]] == Region::Critical)
      crit_vol += grid->spatial.voxel_volume();
  CHECK(ob.j_c == doctest::Approx(4.0 * crit_vol).epsilon(1e-12));

  CHECK(smooth_heaviside(0.0, 0.01) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("initializer objective is convex along segments") {
  auto grid = phantom_grid({3, 3, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  const Prescription rx = toy_rx();
  SolverOptions sopt;
  sopt.tol = 1e-11;

  Rng rng(7);
  auto eval_j = [&](const BoundaryField& g) {
    PlanState plan;
    plan.mode = ControlMode::External;
    plan.g = g;
    prob.source = SpeciesField(*grid);
    prob.g_minus = g;
    auto [psi, rep] = solve_forward(prob, sopt);
    const auto d = dose(*grid, psi, sp);
    return objective_initializer(prob, rx, d, plan).total;
  };
  for (int trial = 0; trial < 5; ++trial) {
    BoundaryField u = BoundaryField::zeros(*grid, false), v = u, mix = u;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < u.g[j].size(); ++i) {
        u.g[j][i] = rng.uniform();
        v.g[j][i] = rng.uniform();
      }
    const double lam = rng.uniform();
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < u.g[j].size(); ++i)
        mix.g[j][i] = lam * u.g[j][i] + (1.0 - lam) * v.g[j][i];
    CHECK(eval_j(mix) <= lam * eval_j(u) + (1.0 - lam) * eval_j(v) + 1e-10);
  }
}

TEST_CASE("adjoint gradient matches central finite differences (external)") {
  auto grid = phantom_grid({3, 3, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  const Prescription rx = toy_rx();
  SolverOptions sopt;
  sopt.tol = 1e-12;

  Rng rng(11);
  BoundaryField g0 = BoundaryField::zeros(*grid, false);
  for (int j = 0; j < 3; ++j)
    for (auto& x : g0.g[j]) x = 0.3 + 0.5 * rng.uniform();

  const BoundaryField grad = gradient_external(prob, rx, sp, g0, nullptr, sopt);

  auto eval_j = [&](const BoundaryField& g) {
    PlanState plan;
    plan.mode = ControlMode::External;
    plan.g = g;
    prob.source = SpeciesField(*grid);
    prob.g_minus = g;
    auto [psi, rep] = solve_forward(prob, sopt);
    const auto d = dose(*grid, psi, sp);
    return objective_initializer(prob, rx, d, plan).total;
  };

  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    BoundaryField w = BoundaryField::zeros(*grid, false);
    for (int j = 0; j < 3; ++j)
      for (auto& x : w.g[j]) x = rng.normal();
    BoundaryField gp = g0, gm = g0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < w.g[j].size(); ++i) {
        gp.g[j][i] += h * w.g[j][i];
        gm.g[j][i] -= h * w.g[j][i];
      }
    const double fd = (eval_j(gp) - eval_j(gm)) / (2.0 * h);
    const double dir = t2_inner(*grid, false, grad, w);
    CHECK(dir == doctest::Approx(fd).epsilon(1e-4));
  }

  // Doubling c_sc shifts the gradient by exactly 2 g.
  Prescription rx2 = rx;
  rx2.c_sc = 2.0;
  const BoundaryField grad2 = gradient_external(prob, rx2, sp, g0, nullptr, sopt);
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < grad.g[j].size(); ++i)
      CHECK(grad2.g[j][i] - grad.g[j][i] ==
            doctest::Approx(2.0 * g0.g[j][i]).epsilon(1e-9));
}

TEST_CASE("adjoint gradient matches central finite differences (internal)") {
  auto grid = phantom_grid({3, 3, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  const Prescription rx = toy_rx();
  SolverOptions sopt;
  sopt.tol = 1e-12;

  Rng rng(13);
  SpeciesField f0(*grid);
  for (int j = 0; j < 3; ++j)
    for (auto& x : f0[j]) x = 0.2 + 0.3 * rng.uniform();
  const SpeciesField grad = gradient_internal(prob, rx, sp, f0, nullptr, sopt);

  auto eval_j = [&](const SpeciesField& f) {
    PlanState plan;
    plan.mode = ControlMode::Internal;
    plan.f = f;
    prob.source = f;
    prob.g_minus = BoundaryField::zeros(*grid, false);
    auto [psi, rep] = solve_forward(prob, sopt);
    const auto d = dose(*grid, psi, sp);
    return objective_initializer(prob, rx, d, plan).total;
  };

  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    SpeciesField w(*grid), fp = f0, fm = f0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < w[j].size(); ++i) {
        w[j][i] = rng.normal();
        fp[j][i] += h * w[j][i];
        fm[j][i] -= h * w[j][i];
      }
    const double fd = (eval_j(fp) - eval_j(fm)) / (2.0 * h);
    const double dir = species_inner(prob, grad, w);
    CHECK(dir == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("optimize_external: zero targets, KKT certificates, objective dominance") {
  auto grid = phantom_grid({4, 4, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});

  // Zero targets: the fixed point lands at zero immediately.
  {
    Prescription rx = toy_rx();
    rx.target_t = rx.target_c = rx.target_n = 0.0;
    FixedPointOptions fopt;
    fopt.solver.tol = 1e-11;
    const PlanState plan = optimize_external(prob, rx, sp, fopt);
    CHECK(plan.iterations == 1);
    for (int j = 0; j < 3; ++j)
      for (double x : plan.g.g[j]) CHECK(x == 0.0);
  }

  const Prescription rx = toy_rx();
  FixedPointOptions fopt;
  fopt.tol = 1e-11;
  fopt.solver.tol = 1e-12;
  const PlanState plan = optimize_external(prob, rx, sp, fopt);
  CHECK(plan.converged);
  MESSAGE("external fixed point iterations ", plan.iterations, ", complementarity ",
          plan.kkt.complementarity);
  CHECK(plan.kkt.complementarity <= 1e-8);
  CHECK(plan.kkt.primal == 0.0);              // g >= 0 by projection
  CHECK(plan.kkt.stationarity <= 1e-6);       // J' >= 0 up to fixed-point tolerance

  // Variational inequality over random admissible directions.
  const BoundaryField trace = cell_trace(*grid, plan.psi_star, false);
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    BoundaryField w = BoundaryField::zeros(*grid, false);
    for (int j = 0; j < 3; ++j)
      for (auto& x : w.g[j]) x = rng.uniform();  // admissible: w >= 0
    double dir = 0.0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < w.g[j].size(); ++i) {
        const double jprime = 2.0 * (-trace.g[j][i] + rx.c_sc * plan.g.g[j][i]);
        // contribution of <J'(g), w - g> in T2 weights
        w.g[j][i] = jprime * (w.g[j][i] - plan.g.g[j][i]);
      }
    for (int j = 0; j < 3; ++j)
      for (std::size_t e = 0; e < grid->boundary.minus_entries.size(); ++e)
        for (int l = 0; l < grid->n_lev(); ++l)
          dir += grid->boundary.minus_entries[e].weight * grid->energy.weights[l] *
                 w.g[j][e * grid->n_lev() + l];
    CHECK(dir >= -1e-8);
  }

  // The converged objective does not exceed the zero control or random
  // admissible controls.
  auto eval_j = [&](const BoundaryField& g) {
    PlanState p;
    p.mode = ControlMode::External;
    p.g = g;
    prob.source = SpeciesField(*grid);
    prob.g_minus = g;
    auto [psi, rep] = solve_forward(prob, fopt.solver);
    return objective_initializer(prob, rx, dose(*grid, psi, sp), p).total;
  };
  const double j_opt = plan.objective.total;
  CHECK(j_opt <= eval_j(BoundaryField::zeros(*grid, false)) + 1e-10);
  for (int trial = 0; trial < 10; ++trial) {
    BoundaryField g = BoundaryField::zeros(*grid, false);
    for (int j = 0; j < 3; ++j)
      for (auto& x : g.g[j]) x = rng.uniform();
    CHECK(j_opt <= eval_j(g) + 1e-10);
  }
}

TEST_CASE("optimize_internal: pointwise complementarity and nonnegativity") {
  auto grid = phantom_grid({3, 3, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  const Prescription rx = toy_rx();
  FixedPointOptions fopt;
  fopt.tol = 1e-11;
  fopt.solver.tol = 1e-12;
  const PlanState plan = optimize_internal(prob, rx, sp, fopt);
  CHECK(plan.converged);
  CHECK(plan.kkt.complementarity <= 1e-8);
  double worst = 0.0;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < plan.f[j].size(); ++i) {
      CHECK(plan.f[j][i] >= 0.0);
      worst = std::max(worst, std::abs(plan.f[j][i] *
                                       (-plan.psi_star[j][i] + rx.c_sc * plan.f[j][i])));
    }
  MESSAGE("internal pointwise complementarity ", worst);
  CHECK(worst <= 1e-8);

  Prescription rx0 = rx;
  rx0.target_t = rx0.target_c = rx0.target_n = 0.0;
  const PlanState zero = optimize_internal(prob, rx0, sp, fopt);
  for (int j = 0; j < 3; ++j)
    for (double x : zero.f[j]) CHECK(x == 0.0);
}

TEST_CASE("optimize_linear_unconstrained: stationarity, dense KKT oracle, scaling") {
  auto grid = phantom_grid({2, 2, 2}, 0, 3);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  Prescription rx = toy_rx();
  rx.target_c = 0.1;
  rx.target_n = 0.05;
  FixedPointOptions fopt;
  fopt.tol = 1e-12;
  fopt.solver.tol = 1e-13;
  const PlanState plan = optimize_linear_unconstrained(prob, rx, sp, fopt);
  CHECK(plan.converged);

  // Stationarity: linear variant has g = gamma_-(psi*) / c_sc exactly.
  const BoundaryField trace = cell_trace(*grid, plan.psi_star, false);
  BoundaryField resid = plan.g;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < resid.g[j].size(); ++i)
      resid.g[j][i] = -trace.g[j][i] + rx.c_sc * plan.g.g[j][i];
  CHECK(t2_norm(*grid, false, resid) <= 1e-8);

  // Monolithic dense solve of the coupled linear optimality system.
  const auto [dpsi, dstar] = dense_linear_optimality(prob, rx, sp);
  double num = 0.0, den = 0.0;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < dpsi[j].size(); ++i) {
      num += (plan.psi[j][i] - dpsi[j][i]) * (plan.psi[j][i] - dpsi[j][i]);
      den += dpsi[j][i] * dpsi[j][i];
    }
  CHECK(std::sqrt(num / std::max(den, 1e-300)) < 1e-8);
  num = den = 0.0;
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < dstar[j].size(); ++i) {
      num += (plan.psi_star[j][i] - dstar[j][i]) * (plan.psi_star[j][i] - dstar[j][i]);
      den += dstar[j][i] * dstar[j][i];
    }
  CHECK(std::sqrt(num / std::max(den, 1e-300)) < 1e-8);

  // Scaling the targets scales the control linearly.
  Prescription rx2 = rx;
  const double alpha = 2.5;
  rx2.target_t *= alpha;
  rx2.target_c *= alpha;
  rx2.target_n *= alpha;
  const PlanState plan2 = optimize_linear_unconstrained(prob, rx2, sp, fopt);
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < plan.g.g[j].size(); ++i)
      CHECK(plan2.g.g[j][i] == doctest::Approx(alpha * plan.g.g[j][i]).epsilon(1e-6));
}

TEST_CASE("full objective: adjoint gradient matches finite differences, refinement descends") {
  auto grid = phantom_grid({3, 3, 2}, 0, 4);
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  StoppingPowers sp = StoppingPowers::constant(*grid, {1.0, 1.0, 1.0});
  Prescription rx = toy_rx();
  rx.c_dv = 0.5;
  rx.c_ad = 0.0;
  SolverOptions sopt;
  sopt.tol = 1e-12;

  Rng rng(23);
  BoundaryField g0 = BoundaryField::zeros(*grid, false);
  for (int j = 0; j < 3; ++j)
    for (auto& x : g0.g[j]) x = 0.4 + 0.4 * rng.uniform();
  const BoundaryField grad = gradient_external_full(prob, rx, sp, g0, nullptr, sopt);

  auto eval_j = [&](const BoundaryField& g) {
    PlanState plan;
    plan.mode = ControlMode::External;
    plan.g = g;
    prob.source = SpeciesField(*grid);
    prob.g_minus = g;
    auto [psi, rep] = solve_forward(prob, sopt);
    return objective_full(prob, rx, dose(*grid, psi, sp), plan).total;
  };
  const double h = 1e-6;
  for (int trial = 0; trial < 8; ++trial) {
    BoundaryField w = BoundaryField::zeros(*grid, false), gp = g0, gm = g0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < w.g[j].size(); ++i) {
        w.g[j][i] = rng.normal();
        gp.g[j][i] += h * w.g[j][i];
        gm.g[j][i] -= h * w.g[j][i];
      }
    const double fd = (eval_j(gp) - eval_j(gm)) / (2.0 * h);
    const double dir = t2_inner(*grid, false, grad, w);
    CHECK(dir == doctest::Approx(fd).epsilon(5e-3));
  }

  // Warm start from the initializer and refine: the full objective must not
  // increase, and typically strictly decreases.
  FixedPointOptions fopt;
  fopt.theta = 0.8;
  fopt.tol = 1e-9;
  fopt.max_iter = 400;
  fopt.solver.tol = 1e-11;
  PlanState init = optimize_external(prob, rx, sp, fopt);
  const double j_init = eval_j(init.g);
  RefineOptions ropt;
  ropt.max_iter = 5;
  ropt.solver.tol = 1e-11;
  const PlanState refined = refine_full_objective(prob, rx, sp, init, ropt);
  MESSAGE("full objective: initializer ", j_init, " refined ", refined.objective.total);
  CHECK(refined.objective.total <= j_init + 1e-12);
  for (int j = 0; j < 3; ++j)
    for (double x : refined.g.g[j]) CHECK(x >= 0.0);
}
