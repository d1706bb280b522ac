#include "csda/hypersingular.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace csda {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double fp_integral(int order, const std::function<double(double)>& f, double e, double kappa,
                   double tol) {
  const double upper = kappa * e;
  const double width = upper - e;
  if (!(width > 0.0)) throw std::domain_error("fp_integral: kappa E - E must be positive");
  const double log_term = std::log(width);

  if (order == 1) {
    const double fe = f(e);
    auto reg = [&](double ep) {
      const double d = ep - e;
      if (std::abs(d) < 1e-9 * std::max(1.0, std::abs(e))) {
        const double h = 1e-6 * std::max(1.0, std::abs(e));
        return (f(e + h) - fe) / h;  // removable limit f'(E)
      }
      return (f(ep) - fe) / d;
    };
    return adaptive_simpson(reg, e, upper, tol) + fe * log_term;
  }
  if (order == 2) {
    const double fe = f(e);
    const double h = 1e-6 * std::max(1.0, std::abs(e));
    const double fpe = (f(e + h) - f(e - h)) / (2.0 * h);
    auto reg = [&](double ep) {
      const double d = ep - e;
      if (std::abs(d) < 1e-7 * std::max(1.0, std::abs(e))) {
        const double hh = 1e-5 * std::max(1.0, std::abs(e));
        return (f(e + hh) - fe - fpe * hh) / (hh * hh);  // ~ f''(E)/2
      }
      return (f(ep) - fe - fpe * d) / (d * d);
    };
    return adaptive_simpson(reg, e, upper, tol) + fpe * log_term - fe / width;
  }
  throw std::invalid_argument("fp_integral: order must be 1 or 2");
}

void truncated_K11(const PhaseSpaceGrid& grid, const MollerData& data,
                   std::span<const double> psi, std::span<double> out) {
  if (psi.size() != grid.field_size() || out.size() != grid.field_size())
    throw std::invalid_argument("truncated_K11: shape mismatch");
  for (int v = 0; v < grid.n_vox(); ++v) {
    const double s0 = data.sigma0[v];
    for (int l = 0; l < grid.n_lev(); ++l) {
      const double e = grid.energy.levels[l];
      const double coef = kTwoPi * std::log(data.kappa * e - e) * sigma_hat(1, s0, e, e);
      for (int n = 0; n < grid.n_dir(); ++n)
        out[grid.idx(v, n, l)] = coef * psi[grid.idx(v, n, l)];
    }
  }
}

void truncated_K21(const PhaseSpaceGrid& grid, const MollerData& data,
                   std::span<const double> psi, std::span<double> out) {
  if (psi.size() != grid.field_size() || out.size() != grid.field_size())
    throw std::invalid_argument("truncated_K21: shape mismatch");
  const int nn = grid.n_dir(), nl = grid.n_lev();
  std::vector<double> slice(nn), lb(nn);
  for (int v = 0; v < grid.n_vox(); ++v) {
    const double s0 = data.sigma0[v];
    for (int l = 0; l < nl; ++l) {
      const double e = grid.energy.levels[l];
      const double width = data.kappa * e - e;
      const double lg = std::log(width);
      const double s2 = sigma_hat(2, s0, e, e);
      // A(x,w,E,d_w) psi = -pi (d_E' mu)(E,E) Delta_S psi
      const double a_coef = -std::numbers::pi * dmu_dEp_diag(e);
      for (int n = 0; n < nn; ++n) slice[n] = psi[grid.idx(v, n, l)];
      grid.sphere.apply_lb(slice, lb);
      for (int n = 0; n < nn; ++n) {
        const double p = psi[grid.idx(v, n, l)];
        double dpsi_de;
        if (l == 0)
          dpsi_de = (p - psi[grid.idx(v, n, 1)]) / grid.energy.steps[1];
        else
          dpsi_de = (psi[grid.idx(v, n, l - 1)] - p) / grid.energy.steps[l];
        out[grid.idx(v, n, l)] = -kTwoPi / width * s2 * p + lg * s2 * a_coef * lb[n] +
                                 kTwoPi * s2 * lg * dpsi_de +
                                 kTwoPi * lg * dsigma2_dEp_diag(s0, e) * p;
      }
    }
  }
}

std::vector<KappaConsistencyRow> kappa_consistency_report(
    const std::function<double(double)>& psi_of_e, const std::vector<double>& kappas,
    const std::vector<double>& sample_energies, double e_m) {
  std::vector<KappaConsistencyRow> rows;
  rows.reserve(kappas.size());
  for (double kappa : kappas) {
    if (kappa <= 1.0) throw std::invalid_argument("kappa_consistency_report: kappa must exceed 1");
    double worst = 0.0;
    for (double e : sample_energies) {
      if (kappa * e > e_m)
        throw std::invalid_argument("kappa_consistency_report: kappa E exceeds E_m at a sample");
      auto f1 = [&](double ep) { return kTwoPi * sigma_hat(1, 1.0, ep, e) * psi_of_e(ep); };
      const double exact = fp_integral(1, f1, e, kappa);
      const double approx = std::log(kappa * e - e) * f1(e);
      worst = std::max(worst, std::abs(exact - approx));
    }
    rows.push_back({kappa, worst});
  }
  return rows;
}

}  // namespace csda
