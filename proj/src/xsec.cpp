#include "csda/xsec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace csda {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double moller_mu(double e_prime, double e) {
  if (e <= 0.0 || e_prime < e) throw std::domain_error("moller_mu: requires E' >= E > 0");
  return std::sqrt(e * (e_prime + 2.0) / (e_prime * (e + 2.0)));
}

double dmu_dEp_diag(double e) {
  if (e <= 0.0) throw std::domain_error("dmu_dEp_diag: requires E > 0");
  return -1.0 / (e * (e + 2.0));
}

double sigma_hat(int order, double sigma0, double e_prime, double e) {
  const double s2 = sigma0 * (e_prime + 1.0) * (e_prime + 1.0) / (e_prime * (e_prime + 2.0));
  switch (order) {
    case 2: return s2;
    case 1: return s2 * (2.0 * e_prime + 1.0) / ((e_prime + 1.0) * (e_prime + 1.0) * e);
    case 0: return s2 * (1.0 / (e * e) + 1.0 / ((e_prime + 1.0) * (e_prime + 1.0)));
    default: throw std::invalid_argument("sigma_hat: order must be 0, 1 or 2");
  }
}

double dsigma2_dEp_diag(double sigma0, double e) {
  return -2.0 * sigma0 * (e + 1.0) / (e * e * (e + 2.0) * (e + 2.0));
}

void MollerData::validate(const SpatialGrid& spatial, const EnergyGrid& energy) const {
  if (kappa <= 1.0) throw std::invalid_argument("MollerData: kappa must exceed 1");
  if (static_cast<int>(sigma0.size()) != spatial.n_active())
    throw std::invalid_argument("MollerData: sigma0 size mismatch");
  const double q = *std::min_element(sigma0.begin(), sigma0.end());
  if (q <= 0.0) throw std::invalid_argument("MollerData: sigma0 must satisfy sigma0 >= q0 > 0");
  if (energy.e_min() <= 0.0)
    throw std::invalid_argument("MollerData: E_0 must be positive");
  if ((kappa - 1.0) * energy.e_min() <= 1.0)
    throw std::invalid_argument(
        "coefficient-hypothesis: ln(kappa E - E) must be positive on I "
        "(requires E_0 > 1/(kappa - 1))");
  if (!base_sigma.empty() &&
      base_sigma.size() != static_cast<std::size_t>(spatial.n_active()) * energy.n_levels())
    throw std::invalid_argument("MollerData: base_sigma size mismatch");
}

MollerData MollerData::constant(const SpatialGrid& spatial, double sigma0, double kappa) {
  MollerData d;
  d.sigma0.assign(spatial.n_active(), sigma0);
  d.kappa = kappa;
  d.q0 = sigma0;
  return d;
}

CoefficientField build_coefficients(const MollerData& data, const SpatialGrid& spatial,
                                    const EnergyGrid& grid) {
  MollerData checked = data;
  checked.validate(spatial, grid);

  CoefficientField cf;
  cf.n_vox = spatial.n_active();
  cf.n_lev = grid.n_levels();
  const std::size_t n = static_cast<std::size_t>(cf.n_vox) * cf.n_lev;
  cf.a.resize(n);
  cf.b.resize(n);
  cf.dadE.resize(n);
  cf.sigma_core.resize(n);

  // Unit-sigma0 level profiles; sigma0(x) scales multiplicatively.
  std::vector<double> a_unit(cf.n_lev), b_unit(cf.n_lev), core_unit(cf.n_lev);
  for (int l = 0; l < cf.n_lev; ++l) {
    const double e = grid.levels[l];
    const double lg = std::log(data.kappa * e - e);
    const double s2 = sigma_hat(2, 1.0, e, e);
    const double s1 = sigma_hat(1, 1.0, e, e);
    a_unit[l] = -kTwoPi * s2 * lg;
    b_unit[l] = -std::numbers::pi * lg * s2 / (e * (e + 2.0));
    core_unit[l] = kTwoPi * s2 / (data.kappa * e - e) - kTwoPi * lg * dsigma2_dEp_diag(1.0, e) +
                   kTwoPi * lg * s1;
  }

  for (int v = 0; v < cf.n_vox; ++v) {
    const double s0 = data.sigma0[v];
    for (int l = 0; l < cf.n_lev; ++l) {
      const std::size_t i = static_cast<std::size_t>(v) * cf.n_lev + l;
      cf.a[i] = s0 * a_unit[l];
      cf.b[i] = s0 * b_unit[l];
      cf.sigma_core[i] = s0 * core_unit[l];
    }
    for (int l = 1; l < cf.n_lev; ++l) {
      const std::size_t i = static_cast<std::size_t>(v) * cf.n_lev + l;
      cf.dadE[i] = (cf.a[i - 1] - cf.a[i]) / grid.steps[l];
    }
    cf.dadE[static_cast<std::size_t>(v) * cf.n_lev] = cf.dadE[static_cast<std::size_t>(v) * cf.n_lev + 1];
  }

  auto& m = cf.margins;
  m.q1 = m.q2 = m.q3 = m.c0 = std::numeric_limits<double>::infinity();
  for (int v = 0; v < cf.n_vox; ++v) {
    for (int l = 0; l < cf.n_lev; ++l) {
      const std::size_t i = static_cast<std::size_t>(v) * cf.n_lev + l;
      m.q2 = std::min(m.q2, -cf.b[i]);
      m.c0 = std::min(m.c0, std::abs(cf.a[i]));
      if (l > 0) m.q1 = std::min(m.q1, -cf.dadE[i]);
    }
    m.q3 = std::min({m.q3, -cf.at_a(v, 0), -cf.at_a(v, cf.n_lev - 1)});
  }
  if (!(m.q1 > 0.0))
    throw std::runtime_error("coefficient-hypothesis: -dA/dE >= q1 > 0 fails");
  if (!(m.q2 > 0.0))
    throw std::runtime_error("coefficient-hypothesis: -b >= q2 > 0 fails");
  if (!(m.q3 > 0.0))
    throw std::runtime_error("coefficient-hypothesis: -a >= q3 > 0 at E_0, E_m fails");
  if (!(m.c0 > 0.0))
    throw std::runtime_error("coefficient-hypothesis: |a| >= c0 > 0 fails");
  return cf;
}

RestrictedKernel build_restricted_kernel(const MollerData& data, const EnergyGrid& grid) {
  if (data.kappa <= 1.0) throw std::invalid_argument("build_restricted_kernel: kappa must exceed 1");
  RestrictedKernel k;
  k.n_lev = grid.n_levels();
  k.kappa = data.kappa;
  const int nl = k.n_lev;
  k.table.assign(static_cast<std::size_t>(nl) * nl, 0.0);
  for (int lp = 0; lp < nl; ++lp) {
    const double ep = grid.levels[lp];
    for (int l = 0; l < nl; ++l) {
      const double e = grid.levels[l];
      double val = 0.0;
      if (ep > e) {
        val = sigma_hat(0, 1.0, ep, e);
        if (ep > data.kappa * e) {
          const double d = ep - e;
          val += -sigma_hat(1, 1.0, ep, e) / d + sigma_hat(2, 1.0, ep, e) / (d * d);
        }
      }
      if (val < 0.0)
        throw std::runtime_error(
            "restricted-kernel: sigma_hat_{r,kappa} negative on the truncated region "
            "(requires sigma2/(E'-E) >= sigma1)");
      k.table[static_cast<std::size_t>(lp) * nl + l] = val;
    }
  }
  k.row_unit.assign(nl, 0.0);
  k.col_unit.assign(nl, 0.0);
  for (int l = 0; l < nl; ++l) {
    double rs = 0.0, cs = 0.0;
    for (int lp = 0; lp < nl; ++lp) {
      rs += k.at(lp, l) * grid.weights[lp];
      cs += k.at(l, lp) * grid.weights[lp];
    }
    k.row_unit[l] = rs;
    k.col_unit[l] = cs;
  }
  k.sigma0_max = data.sigma0.empty() ? 1.0 : *std::max_element(data.sigma0.begin(), data.sigma0.end());
  k.m1 = k.sigma0_max * *std::max_element(k.row_unit.begin(), k.row_unit.end());
  k.m2 = k.sigma0_max * *std::max_element(k.col_unit.begin(), k.col_unit.end());
  return k;
}

SigmaHatTable load_sigma_hat_table(const std::string& path, const EnergyGrid& grid) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_sigma_hat_table: cannot open " + path);
  const int nl = grid.n_levels();
  SigmaHatTable t;
  t.n_lev = nl;
  const std::size_t n = static_cast<std::size_t>(nl) * nl;
  t.s0.assign(n, 0.0);
  t.s1.assign(n, 0.0);
  t.s2.assign(n, 0.0);
  auto level_of = [&](double e) {
    int best = 0;
    double bd = std::abs(grid.levels[0] - e);
    for (int l = 1; l < nl; ++l) {
      const double d = std::abs(grid.levels[l] - e);
      if (d < bd) { bd = d; best = l; }
    }
    if (bd > 1e-9 * std::max(1.0, std::abs(e)))
      throw std::runtime_error("load_sigma_hat_table: energy not on grid");
    return best;
  };
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double ep, e, a0, a1, a2;
    if (!(ss >> ep >> e >> a0 >> a1 >> a2))
      throw std::runtime_error("load_sigma_hat_table: malformed line: " + line);
    const std::size_t i = static_cast<std::size_t>(level_of(ep)) * nl + level_of(e);
    t.s0[i] = a0;
    t.s1[i] = a1;
    t.s2[i] = a2;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Coupled kernel set

SeparableKernel make_uniform_separable(double magnitude, const PhaseSpaceGrid& grid,
                                       KernelVariety variety) {
  SeparableKernel s;
  s.scale = magnitude;
  const int nn = grid.n_dir();
  const int nl = grid.n_lev();
  double wsum = 0.0;
  for (double w : grid.sphere.weights) wsum += w;
  s.u.assign(nn, 1.0 / wsum);
  s.q.assign(nn, 1.0);
  s.r.assign(nl, 1.0);
  if (variety == KernelVariety::Full) {
    double esum = 0.0;
    for (double w : grid.energy.weights) esum += w;
    s.p.assign(nl, 1.0 / esum);
  }
  return s;
}

namespace {

struct EntrySums {
  // Row/col integrals of one entry, split into omega- and energy-profiles so
  // the extrema can be scanned cheaply.
  double row(const KernelEntry& e, int node, int lev, int vox, const PhaseSpaceGrid& grid,
             const MollerData& data) const {
    switch (e.variety) {
      case KernelVariety::None: return 0.0;
      case KernelVariety::Full: {
        double su = 0.0, sp = 0.0;
        for (int n = 0; n < grid.n_dir(); ++n) su += e.sep.u[n] * grid.sphere.weights[n];
        for (int l = 0; l < grid.n_lev(); ++l) sp += e.sep.p[l] * grid.energy.weights[l];
        return e.sep.scale * e.sep.q[node] * e.sep.r[lev] * su * sp;
      }
      case KernelVariety::EnergyLocal: {
        double su = 0.0;
        for (int n = 0; n < grid.n_dir(); ++n) su += e.sep.u[n] * grid.sphere.weights[n];
        return e.sep.scale * e.sep.q[node] * e.sep.r[lev] * su;
      }
      case KernelVariety::Curve:
        return kTwoPi * data.sigma0[vox] * e.curve->row_unit[lev];
    }
    return 0.0;
  }
  double col(const KernelEntry& e, int node, int lev, int vox, const PhaseSpaceGrid& grid,
             const MollerData& data) const {
    switch (e.variety) {
      case KernelVariety::None: return 0.0;
      case KernelVariety::Full: {
        double sq = 0.0, sr = 0.0;
        for (int n = 0; n < grid.n_dir(); ++n) sq += e.sep.q[n] * grid.sphere.weights[n];
        for (int l = 0; l < grid.n_lev(); ++l) sr += e.sep.r[l] * grid.energy.weights[l];
        return e.sep.scale * e.sep.u[node] * e.sep.p[lev] * sq * sr;
      }
      case KernelVariety::EnergyLocal: {
        double sq = 0.0;
        for (int n = 0; n < grid.n_dir(); ++n) sq += e.sep.q[n] * grid.sphere.weights[n];
        return e.sep.scale * e.sep.u[node] * e.sep.r[lev] * sq;
      }
      case KernelVariety::Curve:
        return kTwoPi * data.sigma0[vox] * e.curve->col_unit[lev];
    }
    return 0.0;
  }
};

void check_entry_nonnegative(const KernelEntry& e) {
  if (e.variety == KernelVariety::Full || e.variety == KernelVariety::EnergyLocal) {
    if (e.sep.scale < 0.0) throw std::runtime_error("coupled-kernel: negative scale");
    auto all_nonneg = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0; });
    };
    if (!all_nonneg(e.sep.u) || !all_nonneg(e.sep.q) || !all_nonneg(e.sep.r) ||
        (e.variety == KernelVariety::Full && !all_nonneg(e.sep.p)))
      throw std::runtime_error("coupled-kernel: negative separable factor");
  }
  if (e.variety == KernelVariety::Curve && !e.curve)
    throw std::runtime_error("coupled-kernel: missing curve table");
}

}  // namespace

double CoupledKernelSet::row_sum(int j, int vox, int node, int lev, const PhaseSpaceGrid& grid,
                                 const MollerData& data) const {
  EntrySums s;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) total += s.row(entry(k, j), node, lev, vox, grid, data);
  return total;
}

double CoupledKernelSet::col_sum(int j, int vox, int node, int lev, const PhaseSpaceGrid& grid,
                                 const MollerData& data) const {
  EntrySums s;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) total += s.col(entry(j, k), node, lev, vox, grid, data);
  return total;
}

void CoupledKernelSet::validate(const PhaseSpaceGrid& grid, const MollerData& data) {
  for (const auto& e : entries) check_entry_nonnegative(e);
  m1 = m2 = 0.0;
  // sigma0 enters curve rows multiplicatively; the separable parts are
  // voxel-independent, so scanning a min- and max-sigma0 voxel suffices.
  int vmax = 0;
  for (int v = 1; v < grid.n_vox(); ++v)
    if (data.sigma0[v] > data.sigma0[vmax]) vmax = v;
  for (int j = 0; j < 3; ++j)
    for (int n = 0; n < grid.n_dir(); ++n)
      for (int l = 0; l < grid.n_lev(); ++l) {
        m1 = std::max(m1, row_sum(j, vmax, n, l, grid, data));
        m2 = std::max(m2, col_sum(j, vmax, n, l, grid, data));
      }
  validated = true;
}

double coercivity_margin(const CoupledKernelSet& set, const SpeciesSigma& sigma,
                         const PhaseSpaceGrid& grid, const MollerData& data) {
  double c = std::numeric_limits<double>::infinity();
  for (int j = 0; j < 3; ++j) {
    for (int v = 0; v < grid.n_vox(); ++v)
      for (int n = 0; n < grid.n_dir(); ++n)
        for (int l = 0; l < grid.n_lev(); ++l) {
          const double s = sigma[j][static_cast<std::size_t>(v) * grid.n_lev() + l];
          c = std::min(c, s - set.row_sum(j, v, n, l, grid, data));
          c = std::min(c, s - set.col_sum(j, v, n, l, grid, data));
        }
  }
  return c;
}

double coercivity_margin(const RestrictedKernel& kernel, std::span<const double> sigma,
                         const PhaseSpaceGrid& grid, const MollerData& data) {
  double c = std::numeric_limits<double>::infinity();
  for (int v = 0; v < grid.n_vox(); ++v) {
    const double s0 = data.sigma0[v];
    for (int l = 0; l < grid.n_lev(); ++l) {
      const double s = sigma[static_cast<std::size_t>(v) * grid.n_lev() + l];
      c = std::min(c, s - kTwoPi * s0 * kernel.row_unit[l]);
      c = std::min(c, s - kTwoPi * s0 * kernel.col_unit[l]);
    }
  }
  return c;
}

SpeciesSigma build_default_sigma(const CoupledKernelSet& set,
                                 const std::array<const CoefficientField*, 3>& coeffs,
                                 const PhaseSpaceGrid& grid, const MollerData& data,
                                 double margin) {
  if (margin <= 0.0) throw std::invalid_argument("build_default_sigma: margin must be positive");
  SpeciesSigma sigma;
  const std::size_t n = static_cast<std::size_t>(grid.n_vox()) * grid.n_lev();
  for (int j = 0; j < 3; ++j) {
    sigma[j].assign(n, 0.0);
    for (int v = 0; v < grid.n_vox(); ++v)
      for (int l = 0; l < grid.n_lev(); ++l) {
        // Row/col sums are omega-independent for the built-in kernels
        // (uniform separable factors); scan nodes anyway to stay general.
        double need = 0.0;
        for (int nd = 0; nd < grid.n_dir(); ++nd)
          need = std::max({need, set.row_sum(j, v, nd, l, grid, data),
                           set.col_sum(j, v, nd, l, grid, data)});
        const std::size_t i = static_cast<std::size_t>(v) * grid.n_lev() + l;
        double core = 0.0;
        if (coeffs[j]) core = coeffs[j]->sigma_core[i];
        if (!data.base_sigma.empty()) core += data.base_sigma[i];
        sigma[j][i] = std::max(core, need + margin);
      }
  }
  return sigma;
}

}  // namespace csda
