#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "csda/transport_ops.hpp"

using namespace csda;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

PhaseSpaceGrid tiny_grid(int sphere_level = 1, int levels = 5) {
  return PhaseSpaceGrid(SpatialGrid::uniform_box({0, 0, 0}, {1, 1, 1}, {2, 1, 1}),
                        build_sphere_grid(sphere_level), EnergyGrid::uniform(10.0, 1.5, levels));
}

double field_inner(const PhaseSpaceGrid& g, const SpeciesField& a, const SpeciesField& b) {
  double s = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int v = 0; v < g.n_vox(); ++v)
      for (int n = 0; n < g.n_dir(); ++n)
        for (int l = 0; l < g.n_lev(); ++l) {
          const std::size_t i = g.idx(v, n, l);
          s += g.spatial.voxel_volume() * g.sphere.weights[n] * g.energy.weights[l] * a[j][i] *
               b[j][i];
        }
  return s;
}
}  // namespace

TEST_CASE("rotation_to: defining property, identity, antipode") {
  {
    const RotationFrame r = rotation_to({0, 0, 1});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(r.m[3 * i + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-15));
  }
  {
    const RotationFrame r = rotation_to({0, 0, -1});
    CHECK(r.m[0] == 1.0);
    CHECK(r.m[4] == -1.0);
    CHECK(r.m[8] == -1.0);
  }
  {
    const RotationFrame r = rotation_to({1, 0, 0});
    const Vec3 e3 = r.apply({0, 0, 1});
    CHECK(norm(e3 - Vec3{1, 0, 0}) < 1e-12);
  }
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec3 w{rng.normal(), rng.normal(), rng.normal()};
    w = normalized(w);
    const RotationFrame r = rotation_to(w);
    CHECK(norm(r.apply({0, 0, 1}) - w) <= 1e-12);
    for (int c1 = 0; c1 < 3; ++c1)
      for (int c2 = 0; c2 < 3; ++c2) {
        double d = 0.0;
        for (int row = 0; row < 3; ++row) d += r.m[3 * row + c1] * r.m[3 * row + c2];
        CHECK(d == doctest::Approx(c1 == c2 ? 1.0 : 0.0).epsilon(1e-12));
      }
    const Vec3 a{r.m[0], r.m[3], r.m[6]}, b{r.m[1], r.m[4], r.m[7]}, c{r.m[2], r.m[5], r.m[8]};
    CHECK(dot(a, cross(b, c)) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("curve_point: diagonal returns omega, cone membership, circle average") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 w{rng.normal(), rng.normal(), rng.normal()};
    w = normalized(w);
    const double e = 1.5 + 3.0 * rng.uniform();
    CHECK(norm(curve_point(e, e, w, rng.uniform(0.0, kTwoPi)) - w) < 1e-14);

    const double ep = e * (1.0 + 2.0 * rng.uniform());
    const double mu = moller_mu(ep, e);
    const Vec3 p = curve_point(ep, e, w, rng.uniform(0.0, kTwoPi));
    CHECK(std::abs(norm(p) - 1.0) <= 1e-12);
    CHECK(std::abs(dot(p, w) - mu) <= 1e-12);
  }
  // Average over s equals mu * omega (trapezoid is exact on full periods).
  const Vec3 w = normalized(Vec3{0.3, -0.5, 0.8});
  const double ep = 6.0, e = 2.0;
  Vec3 avg{0, 0, 0};
  const int ns = 16;
  for (int s = 0; s < ns; ++s) avg += curve_point(ep, e, w, kTwoPi * s / ns);
  avg = avg / ns;
  CHECK(norm(avg - w * moller_mu(ep, e)) < 1e-12);
}

TEST_CASE("curve integral is independent of the rotation tie-break") {
  // Shifting the parameter origin is equivalent to composing R(omega) with a
  // rotation about e3; the s-quadrature must not change.
  const Vec3 w = normalized(Vec3{-0.2, 0.9, 0.4});
  const double ep = 5.0, e = 2.0;
  auto psi = [](const Vec3& o) { return 1.0 + o.x + 0.5 * o.y * o.z + o.z * o.z; };
  const int ns = 64;
  double base = 0.0, shifted = 0.0;
  for (int s = 0; s < ns; ++s) {
    base += psi(curve_point(ep, e, w, kTwoPi * s / ns));
    shifted += psi(curve_point(ep, e, w, kTwoPi * s / ns + 0.7));
  }
  CHECK(base == doctest::Approx(shifted).epsilon(1e-10));
}

TEST_CASE("apply_K3: omega-independent field and zero kernel") {
  const PhaseSpaceGrid g = tiny_grid(1, 5);
  const MollerData data = MollerData::constant(g.spatial, 1.3, 2.0);
  const RestrictedKernel kern = build_restricted_kernel(data, g.energy);
  const CurvePlan plan = build_curve_plan(g, 16);

  std::vector<double> psi(g.field_size()), out(g.field_size(), 0.0);
  auto fe = [](double e) { return 1.0 + 0.2 * e; };
  for (int v = 0; v < g.n_vox(); ++v)
    for (int n = 0; n < g.n_dir(); ++n)
      for (int l = 0; l < g.n_lev(); ++l)
        psi[g.idx(v, n, l)] = fe(g.energy.levels[l]);
  apply_K3(g, plan, kern, data.sigma0, psi, out);
  for (int v = 0; v < g.n_vox(); ++v)
    for (int n = 0; n < g.n_dir(); ++n)
      for (int l = 0; l < g.n_lev(); ++l) {
        double expect = 0.0;
        for (int lp = 0; lp <= l; ++lp)
          expect += kern.at(lp, l) * g.energy.weights[lp] * fe(g.energy.levels[lp]);
        expect *= kTwoPi * data.sigma0[v];
        CHECK(out[g.idx(v, n, l)] == doctest::Approx(expect).epsilon(1e-12));
      }

  RestrictedKernel zero = kern;
  std::fill(zero.table.begin(), zero.table.end(), 0.0);
  std::fill(out.begin(), out.end(), 0.0);
  apply_K3(g, plan, zero, data.sigma0, psi, out);
  for (double x : out) CHECK(x == 0.0);
}

TEST_CASE("apply_K3: high-resolution s-quadrature oracle") {
  const PhaseSpaceGrid g = tiny_grid(1, 3);
  const MollerData data = MollerData::constant(g.spatial, 1.0, 2.0);
  const RestrictedKernel kern = build_restricted_kernel(data, g.energy);

  std::vector<double> psi(g.field_size());
  auto fo = [](const Vec3& o, double e) { return 1.0 + 0.5 * o.z + 0.25 * o.x * o.y + 0.1 * e; };
  for (int v = 0; v < g.n_vox(); ++v)
    for (int n = 0; n < g.n_dir(); ++n)
      for (int l = 0; l < g.n_lev(); ++l)
        psi[g.idx(v, n, l)] = fo(g.sphere.nodes[n], g.energy.levels[l]);

  const CurvePlan plan = build_curve_plan(g, 256);
  std::vector<double> out(g.field_size(), 0.0);
  apply_K3(g, plan, kern, data.sigma0, psi, out);

  // Independent brute force with 10^4 s-samples per (E', E, omega).
  const int ns = 10000;
  for (int n = 0; n < g.n_dir(); n += 7)
    for (int l = 0; l < g.n_lev(); ++l) {
      double expect = 0.0;
      for (int lp = 0; lp <= l; ++lp) {
        const double kval = kern.at(lp, l);
        if (kval == 0.0) continue;
        double circ = 0.0;
        for (int s = 0; s < ns; ++s) {
          const Vec3 dir = curve_point(g.energy.levels[lp], g.energy.levels[l],
                                       g.sphere.nodes[n], kTwoPi * s / ns);
          const auto st = g.sphere.locate(dir);
          circ += st.w[0] * psi[g.idx(0, st.node[0], lp)] +
                  st.w[1] * psi[g.idx(0, st.node[1], lp)] +
                  st.w[2] * psi[g.idx(0, st.node[2], lp)];
        }
        expect += kval * g.energy.weights[lp] * (kTwoPi / ns) * circ;
      }
      expect *= data.sigma0[0];
      const double got = out[g.idx(0, n, l)];
      if (std::abs(expect) > 1e-12) CHECK(got == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("apply_K3: s-sample refinement differences decrease") {
  const PhaseSpaceGrid g = tiny_grid(2, 4);
  const MollerData data = MollerData::constant(g.spatial, 1.0, 2.0);
  const RestrictedKernel kern = build_restricted_kernel(data, g.energy);
  std::vector<double> psi(g.field_size());
  for (int v = 0; v < g.n_vox(); ++v)
    for (int n = 0; n < g.n_dir(); ++n)
      for (int l = 0; l < g.n_lev(); ++l) {
        const Vec3 o = g.sphere.nodes[n];
        psi[g.idx(v, n, l)] = std::exp(0.3 * o.z) + 0.2 * o.x;
      }
  const CurvePlan pref = build_curve_plan(g, 2048);
  std::vector<double> ref(g.field_size(), 0.0);
  apply_K3(g, pref, kern, data.sigma0, psi, ref);
  double prev = 1e18;
  for (int ns = 16; ns <= 128; ns *= 2) {
    const CurvePlan p1 = build_curve_plan(g, ns);
    std::vector<double> o1(g.field_size(), 0.0);
    apply_K3(g, p1, kern, data.sigma0, psi, o1);
    double diff = 0.0;
    for (std::size_t i = 0; i < o1.size(); ++i) diff = std::max(diff, std::abs(o1[i] - ref[i]));
    MESSAGE("n_s ", ns, " error vs reference ", diff);
    CHECK(diff < prev);
    prev = diff;
  }
}

TEST_CASE("apply_K1/K2 dense: separable factorization, isotropization, stochastic row") {
  const PhaseSpaceGrid g = tiny_grid(1, 4);
  const int nn = g.n_dir(), nl = g.n_lev();

  std::vector<double> u(nn), q(nn), p(nl), r(nl);
  for (int n = 0; n < nn; ++n) {
    u[n] = 1.0 + 0.5 * g.sphere.nodes[n].z * g.sphere.nodes[n].z;
    q[n] = 0.5 + 0.1 * g.sphere.nodes[n].x * g.sphere.nodes[n].x;
  }
  for (int l = 0; l < nl; ++l) {
    p[l] = 1.0 + 0.01 * g.energy.levels[l];
    r[l] = 2.0 - 0.05 * g.energy.levels[l];
  }
  std::vector<double> table(static_cast<std::size_t>(nn) * nn * nl * nl);
  for (int np = 0; np < nn; ++np)
    for (int n = 0; n < nn; ++n)
      for (int lp = 0; lp < nl; ++lp)
        for (int l = 0; l < nl; ++l)
          table[((static_cast<std::size_t>(np) * nn + n) * nl + lp) * nl + l] =
              u[np] * p[lp] * q[n] * r[l];
  std::vector<double> psi(g.field_size());
  Rng rng(9);
  for (auto& x : psi) x = rng.uniform();
  std::vector<double> out(g.field_size(), 0.0);
  apply_K1_dense(g, table, psi, out);
  for (int v = 0; v < g.n_vox(); ++v) {
    double inner = 0.0;
    for (int np = 0; np < nn; ++np)
      for (int lp = 0; lp < nl; ++lp)
        inner += u[np] * p[lp] * g.sphere.weights[np] * g.energy.weights[lp] *
                 psi[g.idx(v, np, lp)];
    for (int n = 0; n < nn; ++n)
      for (int l = 0; l < nl; ++l)
        CHECK(out[g.idx(v, n, l)] == doctest::Approx(q[n] * r[l] * inner).epsilon(1e-12));
  }

  std::vector<double> iso(static_cast<std::size_t>(nn) * nn * nl,
                          1.0 / (4.0 * std::numbers::pi));
  std::fill(out.begin(), out.end(), 0.0);
  apply_K2_dense(g, iso, psi, out);
  for (int v = 0; v < g.n_vox(); ++v)
    for (int l = 0; l < nl; ++l) {
      double avg = 0.0;
      for (int np = 0; np < nn; ++np) avg += g.sphere.weights[np] * psi[g.idx(v, np, l)];
      avg /= 4.0 * std::numbers::pi;
      for (int n = 0; n < nn; ++n)
        CHECK(out[g.idx(v, n, l)] == doctest::Approx(avg).epsilon(1e-12));
    }
  std::fill(psi.begin(), psi.end(), 1.0);
  std::fill(out.begin(), out.end(), 0.0);
  apply_K2_dense(g, iso, psi, out);
  for (double x : out) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> bad = iso;
  bad[0] = -1.0;
  CHECK_THROWS(apply_K2_dense(g, bad, psi, out));
}

TEST_CASE("coupled operator: diagonal decoupling, adjoint identity, dense transpose") {
  auto grid = std::make_shared<PhaseSpaceGrid>(tiny_grid(1, 4));
  const auto& g = *grid;
  ProblemOptions opt;
  opt.coupling_photon_self = 0.07;
  opt.coupling_photon_electron = 0.15;
  opt.coupling_photon_positron = 0.04;
  opt.coupling_electron_photon = 0.06;
  opt.coupling_positron_photon = 0.03;
  TransportProblem prob = make_problem(grid, opt);
  const CollisionOperator& K = prob.collision;

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    SpeciesField a(g), b(g), ka(g), kb(g);
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < a[j].size(); ++i) {
        a[j][i] = rng.normal();
        b[j][i] = rng.normal();
      }
    K.apply(a, ka);
    K.apply_adjoint(b, kb);
    const double lhs = field_inner(g, ka, b);
    const double rhs = field_inner(g, a, kb);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }

  MollerData data = MollerData::constant(g.spatial, 1.0, 2.0);
  auto moller = std::make_shared<RestrictedKernel>(build_restricted_kernel(data, g.energy));
  CoupledKernelSet diag;
  diag.entry(kElectron, kElectron).variety = KernelVariety::Curve;
  diag.entry(kElectron, kElectron).curve = moller;
  diag.validate(g, data);
  CollisionOperator kd(g, diag, data, 16);
  SpeciesField in(g), out(g);
  Rng rng2(8);
  for (int j = 0; j < 3; ++j)
    for (auto& x : in[j]) x = rng2.uniform();
  kd.apply(in, out);
  for (std::size_t i = 0; i < out[kPhoton].size(); ++i) {
    CHECK(out[kPhoton][i] == 0.0);
    CHECK(out[kPositron][i] == 0.0);
  }
  std::vector<double> single(g.field_size(), 0.0);
  apply_K3(g, kd.plan(), *moller, data.sigma0, in[kElectron], single);
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK(out[kElectron][i] == doctest::Approx(single[i]).epsilon(1e-14));

  // Dense W-weighted transpose identity, entrywise.
  const std::size_t fs = g.field_size();
  const std::vector<double> wq = g.quadrature_weights();
  DenseMatrix mk(3 * fs, 3 * fs), mk_adj(3 * fs, 3 * fs);
  SpeciesField e(g), y(g);
  for (std::size_t c = 0; c < 3 * fs; ++c) {
    for (int j = 0; j < 3; ++j) std::fill(e[j].begin(), e[j].end(), 0.0);
    e[c / fs][c % fs] = 1.0;
    K.apply(e, y);
    std::size_t r = 0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < fs; ++i, ++r) mk(r, c) = wq[i] * y[j][i];
    K.apply_adjoint(e, y);
    r = 0;
    for (int j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < fs; ++i, ++r) mk_adj(r, c) = wq[i] * y[j][i];
  }
  CHECK(mk.max_abs_diff(mk_adj.transposed()) < 1e-12);
}

TEST_CASE("coupled operator: linearity and positivity") {
  auto grid = std::make_shared<PhaseSpaceGrid>(tiny_grid(1, 4));
  const auto& g = *grid;
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  Rng rng(12);
  SpeciesField a(g), b(g), lin(g), ka(g), kb(g), kl(g);
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < a[j].size(); ++i) {
      a[j][i] = rng.normal();
      b[j][i] = rng.normal();
      lin[j][i] = 2.5 * a[j][i] - 1.25 * b[j][i];
    }
  prob.collision.apply(a, ka);
  prob.collision.apply(b, kb);
  prob.collision.apply(lin, kl);
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < kl[j].size(); ++i)
      CHECK(kl[j][i] == doctest::Approx(2.5 * ka[j][i] - 1.25 * kb[j][i]).epsilon(1e-12));

  SpeciesField pos(g), kp(g);
  for (int j = 0; j < 3; ++j)
    for (auto& x : pos[j]) x = rng.uniform();
  prob.collision.apply(pos, kp);
  for (int j = 0; j < 3; ++j)
    for (double x : kp[j]) CHECK(x >= -1e-15);
}
