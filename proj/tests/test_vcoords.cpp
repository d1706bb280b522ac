#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "csda/vcoords.hpp"

using namespace csda;

namespace {
std::shared_ptr<PhaseSpaceGrid> make_grid(int nx, int levels, int sphere_level = 1) {
  return std::make_shared<PhaseSpaceGrid>(
      SpatialGrid::uniform_box({0, 0, 0}, {1.0 / nx, 1.0 / nx, 1.0 / nx}, {nx, nx, nx}),
      build_sphere_grid(sphere_level), EnergyGrid::uniform(8.0, 1.5, levels));
}
}  // namespace

TEST_CASE("velocity coordinate round trips are exact") {
  CHECK(norm(to_velocity({0, 0, 1}, 4.0) - Vec3{0, 0, 2}) == 0.0);
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    Vec3 w{rng.normal(), rng.normal(), rng.normal()};
    w = normalized(w);
    const double e = 1.6 + 6.0 * rng.uniform();
    const Vec3 v = to_velocity(w, e);
    CHECK(std::abs(dot(v, v) - e) <= 1e-14 * e);
    const auto [w2, e2] = from_velocity(v, 1.5, 8.0);
    CHECK(norm(w2 - w) <= 1e-14);
    CHECK(std::abs(e2 - e) <= 1e-14 * e);
  }
  CHECK_THROWS_AS(from_velocity({0.1, 0, 0}, 1.5, 8.0), std::domain_error);
  CHECK_THROWS_AS(from_velocity({9.0, 0, 0}, 1.5, 8.0), std::domain_error);
}

TEST_CASE("velocity grid: shell bounds and seam/axis exclusions") {
  auto grid = make_grid(2, 9);
  const VelocityGrid vg = build_velocity_grid(*grid, false);
  CHECK(vg.n_nodes() > 0);
  for (int k = 0; k < vg.n_nodes(); ++k) {
    const double r = norm(vg.nodes[k]);
    CHECK(r > vg.r0);
    CHECK(r < vg.rm);
    CHECK(!vg.excluded[k]);
    const Vec3& v = vg.nodes[k];
    CHECK(v.x * v.x + v.y * v.y >= 1e-10);
    const bool on_seam = std::abs(v.y) <= 1e-5 * r && v.x >= -1e-5;
    CHECK(!on_seam);
  }
}

TEST_CASE("transformed coefficients") {
  CHECK(transform_a(-2.0, {1.0, 1.0, 0.0}) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(transform_a(-3.0, {1.0, 0.0, 0.0}) == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(transform_b(-0.7, {0.3, 0.4, 0.5}) == -0.7);
  CHECK(transform_sigma(2.2, {0.3, 0.4, 0.5}) == 2.2);

  // Pullback comparison: a / (2 |v|^2) evaluated either way agrees.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double e = 1.6 + 5.0 * rng.uniform();
    Vec3 w{rng.normal(), rng.normal(), rng.normal()};
    w = normalized(w);
    const Vec3 v = to_velocity(w, e);
    const double a = -(1.0 + 0.3 * e);
    CHECK(transform_a(a, v) == doctest::Approx(a / (2.0 * e)).epsilon(1e-14));
  }
}

TEST_CASE("apply_P: zero, radial identity, hand-expanded mixed term") {
  auto zero = [](const Vec3&) { return 0.0; };
  CHECK(apply_P(zero, {1.0, 0.5, -0.3}, 1e-3) == 0.0);

  // P applied to |v|^2 gives 4 |v|^2 = 2 r psi'(r) with psi = r^2; the
  // angular combination P - 2 v.grad_v annihilates radial fields.
  auto radial = [](const Vec3& v) { return dot(v, v); };
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    if (v.x * v.x + v.y * v.y < 0.1) continue;
    const double p = apply_P(radial, v, 1e-4);
    CHECK(p == doctest::Approx(4.0 * dot(v, v)).epsilon(1e-5));
    const double angular = p - 2.0 * velocity_radial_term(radial, v, 1e-4);
    CHECK(std::abs(angular) <= 1e-5 * (1.0 + dot(v, v)));
  }
  // Radial quartic for a non-trivial radial profile.
  auto radial4 = [](const Vec3& v) { return dot(v, v) * dot(v, v); };
  for (int trial = 0; trial < 10; ++trial) {
    Vec3 v{1.0 + rng.uniform(), rng.normal(), rng.normal()};
    const double p = apply_P(radial4, v, 1e-4);
    const double ang = p - 2.0 * velocity_radial_term(radial4, v, 1e-4);
    CHECK(std::abs(ang) <= 1e-4 * (1.0 + p));
  }

  // psi = v1 v3: only the mixed 1-3 derivative survives: P = -2 v1 v3.
  auto mixed = [](const Vec3& v) { return v.x * v.z; };
  for (int trial = 0; trial < 30; ++trial) {
    Vec3 v{0.5 + rng.uniform(), rng.normal(), rng.normal()};
    CHECK(apply_P(mixed, v, 1e-4) == doctest::Approx(-2.0 * v.x * v.z).epsilon(1e-6));
  }
  // psi = v3: all second derivatives vanish.
  auto lin = [](const Vec3& v) { return v.z; };
  CHECK(apply_P(lin, {0.8, 0.4, 1.2}, 1e-4) == doctest::Approx(0.0).epsilon(1e-8));

  CHECK_THROWS_AS(apply_P(radial, {1e-8, 1e-8, 2.0}, 1e-4), std::domain_error);
}

TEST_CASE("inflow set mapping preserves the sign of the normal component") {
  auto grid = make_grid(2, 6);
  const auto& g = *grid;
  for (const auto& e : g.boundary.minus_entries) {
    const auto& face = g.boundary.faces[e.face];
    const Vec3 w = g.sphere.nodes[e.node];
    Vec3 nu{0, 0, 0};
    nu[face.axis] = face.dir;
    for (double energy : {1.6, 3.0, 7.5}) {
      const Vec3 v = to_velocity(w, energy);
      CHECK(dot(v, nu) < 0.0);
      CHECK(dot(v, nu) == doctest::Approx(std::sqrt(energy) * dot(w, nu)).epsilon(1e-14));
    }
  }
}

TEST_CASE("shell-volume quadrature reproduces the phase measure with J = 2/|v|") {
  auto grid = make_grid(2, 65);
  const VelocityGrid vg = build_velocity_grid(*grid, true);
  auto psi = [](const Vec3& w, double e) {
    return 1.0 + 0.3 * w.z + 0.05 * e + 0.02 * e * w.x * w.x;
  };
  // (omega, E) side restricted to the shell-covered levels.
  double lhs = 0.0;
  for (int n = 0; n < grid->n_dir(); ++n)
    for (int l = 1; l + 1 < grid->n_lev(); ++l)
      lhs += grid->sphere.weights[n] * grid->energy.weights[l] *
             psi(grid->sphere.nodes[n], grid->energy.levels[l]);
  double rhs = 0.0;
  for (int k = 0; k < vg.n_nodes(); ++k) {
    const Vec3& v = vg.nodes[k];
    const double r = norm(v);
    rhs += vg.weights[k] * (2.0 / r) * psi(v / r, r * r);
  }
  MESSAGE("phase measure lhs ", lhs, " vs shell rhs ", rhs);
  CHECK(rhs == doctest::Approx(lhs).epsilon(1e-4));
}

TEST_CASE("operator equivalence: constant field, advection comparison, refinement") {
  // Constant field with Sigma and kernels off: both sides vanish.
  {
    auto grid = make_grid(4, 7);
    TransportProblem prob = make_problem(grid, ProblemOptions{});
    EquivalenceOptions eopt;
    eopt.include_sigma = false;
    eopt.include_kernel = false;
    const double res = equivalence_residual(
        prob, [](const Vec3&, const Vec3&, double) { return 2.5; }, eopt);
    CHECK(res <= 1e-9);
  }

  // Kernel-free advection-only comparison on a linear-in-x field.
  {
    auto grid = make_grid(6, 7);
    TransportProblem prob = make_problem(grid, ProblemOptions{});
    EquivalenceOptions eopt;
    eopt.include_sigma = false;
    eopt.include_kernel = false;
    const double res = equivalence_residual(
        prob,
        [](const Vec3& x, const Vec3&, double) { return 1.0 + 0.5 * x.x - 0.25 * x.y; },
        eopt);
    MESSAGE("advection-only equivalence residual ", res);
    CHECK(res < 0.2);
  }

  // Manufactured smooth field: first-order decrease under joint refinement.
  auto field = [](const Vec3& x, const Vec3& w, double e) {
    return (1.0 + 0.4 * x.x + 0.2 * x.y * x.z) * (1.0 + 0.2 * w.z) * (0.5 + 0.05 * e);
  };
  double prev = 1e18;
  for (int k = 0; k < 3; ++k) {
    auto grid = make_grid(4 << k, 5 * (1 << k) + 1);
    TransportProblem prob = make_problem(grid, ProblemOptions{});
    const double res = equivalence_residual(prob, field);
    MESSAGE("equivalence refinement ", k, " residual ", res);
    CHECK(res < prev);
    prev = res;
  }
}
