#include "csda/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "csda/hypersingular.hpp"

namespace csda {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("io: cannot create output directory " + dir);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("io: cannot write " + tmp);
    out << text;
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("io: cannot finalize " + path);
}

std::string echo_config(const RunContext& ctx) {
  const auto& c = ctx.config;
  std::ostringstream os;
  os << "dims: " << c.dims[0] << " " << c.dims[1] << " " << c.dims[2] << "\n"
     << "spacing: " << c.spacing.x << " " << c.spacing.y << " " << c.spacing.z << "\n"
     << "sphere_level: " << c.sphere_level << "\n"
     << "energy_levels: " << c.energy_levels << "\n"
     << "e_min: " << c.e_min << "\ne_max: " << c.e_max << "\n"
     << "kappa: " << c.physics.kappa << "\nsigma0: " << c.physics.sigma0 << "\n"
     << "sigma_margin: " << c.physics.sigma_margin << "\n"
     << "phantom: " << c.phantom << "\nlabel_file: " << c.label_file << "\n"
     << "seed: " << ctx.seed << "\nthreads: " << c.threads << "\n";
  return os.str();
}

struct ValidationOutcome {
  std::string report;
  bool ok = true;

  void check(const std::string& name, bool pass, double value) {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << "  " << name << " = " << value << "\n";
    report += os.str();
    ok = ok && pass;
  }
};

ValidationOutcome run_hypothesis_suite(RunSetup& setup, std::uint64_t seed) {
  ValidationOutcome out;
  auto& prob = setup.problem;
  const auto& g = *setup.grid;

  double wsum = 0.0;
  for (double w : g.sphere.weights) wsum += w;
  out.check("sphere-weight-sum-4pi", std::abs(wsum - 4.0 * std::numbers::pi) < 1e-6, wsum);

  for (int s = 0; s < 2; ++s) {
    const auto& m = prob.coeff[s].margins;
    out.check("margin:q1 (-dA/dE > 0)", m.q1 > 0.0, m.q1);
    out.check("margin:q2 (-b > 0)", m.q2 > 0.0, m.q2);
    out.check("margin:q3 (-a at endpoints > 0)", m.q3 > 0.0, m.q3);
    out.check("margin:c0 (|a| > 0)", m.c0 > 0.0, m.c0);
  }

  const auto& set = prob.collision.kernel_set();
  out.check("schur:M1 finite", std::isfinite(set.m1), set.m1);
  out.check("schur:M2 finite", std::isfinite(set.m2), set.m2);

  const double c = prob.margin_c();
  out.check("margin:sigma-minus-kernel-sums (coupled coercivity)", c > 0.0, c);
  const double cp = prob.margin_c_prime();
  out.check("margin:c-prime", cp > 0.0, cp);

  const double bound = 2.0 * std::numbers::pi * std::sqrt(set.m1 * set.m2);
  const double knorm = prob.collision.norm_estimate(seed, 60);
  out.check("bound:collision-norm <= 2pi sqrt(M1 M2)", knorm <= bound + 1e-6, knorm);

  // Sampled accretivity of Sigma - K.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  double worst = std::numeric_limits<double>::infinity();
  SpeciesField psi(g), k(g);
  for (int trial = 0; trial < 50; ++trial) {
    for (int j = 0; j < 3; ++j)
      for (auto& x : psi[j]) x = rng.normal();
    prob.collision.apply(psi, k);
    double quad = 0.0, nrm = 0.0;
    for (int j = 0; j < 3; ++j)
      for (int v = 0; v < g.n_vox(); ++v)
        for (int n = 0; n < g.n_dir(); ++n)
          for (int l = 0; l < g.n_lev(); ++l) {
            const std::size_t i = g.idx(v, n, l);
            const double w = g.spatial.voxel_volume() * g.sphere.weights[n] *
                             g.energy.weights[l];
            quad += w * (prob.sigma_of(j, v, l) * psi[j][i] - k[j][i]) * psi[j][i];
            nrm += w * psi[j][i] * psi[j][i];
          }
    worst = std::min(worst, quad / nrm - c);
  }
  out.check("coercivity:sampled <Sigma-K psi, psi> >= c |psi|^2 (min slack)", worst >= -1e-8,
            worst);
  return out;
}

void write_manifest(const RunContext& ctx, const std::string& command,
                    const std::string& validation, const std::string& results,
                    double seconds) {
  std::ostringstream os;
  os << "csda run manifest\n"
     << "version: 0.1.0\n"
     << "command: " << command << "\n\n[config]\n"
     << echo_config(ctx) << "\n[validation]\n"
     << validation << "\n[results]\n"
     << results << "\nwall_seconds: " << seconds << "\n";
  write_text_atomic(ctx.out_dir + "/manifest.txt", os.str());
}

std::vector<double> dose_on_full_box(const RunSetup& setup, const std::vector<double>& d) {
  const auto& sp = setup.grid->spatial;
  std::vector<double> vol(static_cast<std::size_t>(sp.dims[0]) * sp.dims[1] * sp.dims[2], 0.0);
  for (int v = 0; v < sp.n_active(); ++v) vol[sp.cell_of_active[v]] = d[v];
  return vol;
}

std::string volume_meta(const RunSetup& setup, const std::string& what) {
  const auto& c = setup.config;
  std::ostringstream os;
  os << "content: " << what << "\nencoding: raw float64 little-endian\n"
     << "dims: " << c.dims[0] << " " << c.dims[1] << " " << c.dims[2] << "\n"
     << "ordering: x-fastest\n"
     << "spacing: " << c.spacing.x << " " << c.spacing.y << " " << c.spacing.z << "\n"
     << "origin: " << c.origin.x << " " << c.origin.y << " " << c.origin.z << "\n";
  return os.str();
}

std::string flux_meta(const RunSetup& setup) {
  const auto& g = *setup.grid;
  std::ostringstream os;
  os << "content: species flux\nencoding: raw float64 little-endian\n"
     << "layout: (active_voxel, sphere_node, energy_level), level fastest\n"
     << "species_order: photon electron positron (one file each)\n"
     << "active_voxels: " << g.n_vox() << "\nsphere_nodes: " << g.n_dir()
     << "\nenergy_levels: " << g.n_lev() << "\nenergy_max_first: true\n";
  return os.str();
}

void export_solution(const RunSetup& setup, const RunContext& ctx, const SpeciesField& psi) {
  static const char* names[3] = {"flux_photon", "flux_electron", "flux_positron"};
  for (int j = 0; j < 3; ++j)
    write_raw_f64(ctx.out_dir + "/" + names[j] + ".raw", psi[j], flux_meta(setup));
  const std::vector<double> d = dose(*setup.grid, psi, setup.stopping);
  write_raw_f64(ctx.out_dir + "/dose.raw", dose_on_full_box(setup, d),
                volume_meta(setup, "absorbed dose"));
}

void export_dvh(const RunSetup& setup, const RunContext& ctx, const std::vector<double>& d) {
  const auto& sp = setup.grid->spatial;
  double dmax = 0.0;
  for (double x : d) dmax = std::max(dmax, x);
  if (dmax == 0.0) dmax = 1.0;
  std::ostringstream os;
  os << "# level\tfraction_target\tfraction_critical\tfraction_normal\n";
  auto frac_or_nan = [&](Region r, double level) -> std::string {
    try {
      return std::to_string(dvh_fraction(sp, d, r, level));
    } catch (const std::invalid_argument&) {
      return "nan";
    }
  };
  const int steps = 64;
  for (int i = 0; i <= steps; ++i) {
    const double level = dmax * i / steps;
    os << level << "\t" << frac_or_nan(Region::Target, level) << "\t"
       << frac_or_nan(Region::Critical, level) << "\t" << frac_or_nan(Region::Normal, level)
       << "\n";
  }
  write_text_atomic(ctx.out_dir + "/dvh.tsv", os.str());
}

std::string objective_text(const ObjectiveBreakdown& o) {
  std::ostringstream os;
  os << "j_target\t" << o.j_t << "\nj_critical\t" << o.j_c << "\nj_normal\t" << o.j_n
     << "\nj_dose_volume\t" << o.j_dv << "\nj_admissible\t" << o.j_ad << "\nj_stabilizer\t"
     << o.j_sc << "\ntotal\t" << o.total << "\n";
  return os.str();
}

BoundaryField constant_boundary(const PhaseSpaceGrid& g, int species, double value) {
  return BoundaryField::constant(g, false, species, value);
}

}  // namespace

void write_raw_f64(const std::string& path, std::span<const double> data,
                   const std::string& meta_text) {
  static_assert(sizeof(double) == 8);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write " + path);
  // Little-endian byte order, explicitly.
  for (double v : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    out.write(bytes, 8);
  }
  write_text_atomic(path + ".meta", meta_text);
}

int cmd_validate(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(ctx.out_dir);
  RunSetup setup;
  ValidationOutcome outcome;
  try {
    setup = build_setup(ctx.config);
    outcome = run_hypothesis_suite(setup, ctx.seed);
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.report += std::string("FAIL  ") + e.what() + "\n";
  }
  std::fputs(outcome.report.c_str(), stdout);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(ctx, "validate", outcome.report,
                 outcome.ok ? "all hypothesis checks passed\n" : "hypothesis checks FAILED\n",
                 secs);
  return outcome.ok ? kExitOk : kExitValidation;
}

namespace {

int run_transport_command(const RunContext& ctx, bool adjoint) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(ctx.out_dir);
  RunSetup setup;
  ValidationOutcome outcome;
  try {
    setup = build_setup(ctx.config);
    outcome = run_hypothesis_suite(setup, ctx.seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "validation failed: %s\n", e.what());
    return kExitValidation;
  }
  if (!outcome.ok) {
    std::fputs(outcome.report.c_str(), stderr);
    return kExitValidation;
  }

  auto& prob = setup.problem;
  const auto& g = *setup.grid;
  prob.source = SpeciesField(g);
  if (ctx.config.volume_source != 0.0)
    std::fill(prob.source[ctx.config.volume_species].begin(),
              prob.source[ctx.config.volume_species].end(), ctx.config.volume_source);
  if (!adjoint)
    prob.g_minus = constant_boundary(g, ctx.config.boundary_species, ctx.config.boundary_flux);
  else
    prob.g_plus =
        BoundaryField::constant(g, true, ctx.config.boundary_species, ctx.config.boundary_flux);

  SpeciesField psi(g);
  SolveReport rep;
  try {
    auto [solution, report] = adjoint ? solve_adjoint(prob, ctx.config.solver)
                                      : solve_forward(prob, ctx.config.solver);
    psi = std::move(solution);
    rep = report;
  } catch (const SolveFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitSolver;
  }

  try {
    export_solution(setup, ctx, psi);
    export_dvh(setup, ctx, dose(g, psi, setup.stopping));
    if (rep.compatibility_warning)
      std::fprintf(stderr,
                   "warning: charged-species inflow data is nonzero at the initial energy "
                   "slice; the solution is not continuous up to the boundary there\n");
    std::ostringstream res;
    res << "iterations: " << rep.iterations << "\nresidual: " << rep.residual
        << "\nflux_norms: " << rep.flux_norms[0] << " " << rep.flux_norms[1] << " "
        << rep.flux_norms[2] << "\noutflow_trace_norm: " << rep.outflow_norm
        << "\ncompatibility_warning: " << (rep.compatibility_warning ? "yes" : "no") << "\n";
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(ctx, adjoint ? "adjoint" : "forward", outcome.report, res.str(), secs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace

int cmd_forward(const RunContext& ctx) { return run_transport_command(ctx, false); }
int cmd_adjoint(const RunContext& ctx) { return run_transport_command(ctx, true); }

int cmd_plan(const RunContext& ctx, const std::string& mode) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(ctx.out_dir);
  RunSetup setup;
  ValidationOutcome outcome;
  try {
    setup = build_setup(ctx.config);
    outcome = run_hypothesis_suite(setup, ctx.seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "validation failed: %s\n", e.what());
    return kExitValidation;
  }
  if (!outcome.ok) {
    std::fputs(outcome.report.c_str(), stderr);
    return kExitValidation;
  }

  PlanState plan;
  try {
    if (mode == "external")
      plan = optimize_external(setup.problem, setup.config.rx, setup.stopping,
                               setup.config.fixed_point);
    else if (mode == "internal")
      plan = optimize_internal(setup.problem, setup.config.rx, setup.stopping,
                               setup.config.fixed_point);
    else if (mode == "linear")
      plan = optimize_linear_unconstrained(setup.problem, setup.config.rx, setup.stopping,
                                           setup.config.fixed_point);
    else
      throw std::runtime_error("plan: unknown mode " + mode);
  } catch (const SolveFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitSolver;
  }

  try {
    export_solution(setup, ctx, plan.psi);
    export_dvh(setup, ctx, plan.dose_field);
    write_text_atomic(ctx.out_dir + "/objective.tsv", objective_text(plan.objective));
    if (plan.mode == ControlMode::Internal) {
      write_raw_f64(ctx.out_dir + "/control_source.raw", flatten(plan.f),
                    "content: internal source control (3 species stacked)\n");
    } else {
      std::vector<double> flat;
      for (int j = 0; j < 3; ++j)
        flat.insert(flat.end(), plan.g.g[j].begin(), plan.g.g[j].end());
      write_raw_f64(ctx.out_dir + "/control_boundary.raw", flat,
                    "content: inflow boundary control per (gamma-minus entry, level), 3 species "
                    "stacked\n");
    }
    std::ostringstream kk;
    kk << "stationarity\t" << plan.kkt.stationarity << "\ncomplementarity\t"
       << plan.kkt.complementarity << "\nprimal\t" << plan.kkt.primal << "\n";
    write_text_atomic(ctx.out_dir + "/kkt.txt", kk.str());

    std::ostringstream res;
    res << "mode: " << mode << "\nfixed_point_iterations: " << plan.iterations
        << "\nobjective: " << plan.objective.total
        << "\ncomplementarity_residual: " << plan.kkt.complementarity
        << "\nstationarity_residual: " << plan.kkt.stationarity
        << "\nprimal_residual: " << plan.kkt.primal << "\n";
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(ctx, "plan --mode=" + mode, outcome.report, res.str(), secs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

int cmd_kappa_study(const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(ctx.out_dir);
  try {
    const auto& cfg = ctx.config;
    std::vector<double> samples;
    // Sample energies chosen so kappa E stays below E_m for every kappa.
    double kmax = 1.0;
    for (double k : cfg.kappa_list) kmax = std::max(kmax, k);
    const double top = cfg.e_max / kmax;
    for (int i = 0; i < cfg.kappa_samples; ++i)
      samples.push_back(cfg.e_min + (top - cfg.e_min) * (i + 0.5) / cfg.kappa_samples);
    const auto rows = kappa_consistency_report([](double e) { return e * e; }, cfg.kappa_list,
                                               samples, cfg.e_max);
    std::ostringstream os;
    os << "# kappa\tdiscrepancy\n";
    for (const auto& r : rows) os << r.kappa << "\t" << r.discrepancy << "\n";
    write_text_atomic(ctx.out_dir + "/kappa_consistency.tsv", os.str());
    std::ostringstream res;
    res << "rows: " << rows.size() << "\n";
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(ctx, "kappa-study", "not applicable\n", res.str(), secs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "kappa-study failed: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace csda
