#include "csda/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>

namespace csda {

double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
  return v / n;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::vector<double> DenseMatrix::apply(std::span<const double> x) const {
  if (x.size() != cols_) throw std::invalid_argument("DenseMatrix::apply: size mismatch");
  std::vector<double> y(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = 0.0;
    const double* row = &a_[r * cols_];
    for (std::size_t c = 0; c < cols_; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

double DenseMatrix::max_abs_diff(const DenseMatrix& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw std::invalid_argument("DenseMatrix::max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a_.size(); ++i) m = std::max(m, std::abs(a_[i] - other.a_[i]));
  return m;
}

std::vector<double> lu_solve(DenseMatrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw std::invalid_argument("lu_solve: shape mismatch");
  std::vector<std::size_t> piv(n);
  for (std::size_t i = 0; i < n; ++i) piv[i] = i;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      const double v = std::abs(a(r, k));
      if (v > best) { best = v; p = r; }
    }
    if (best == 0.0) throw std::runtime_error("lu_solve: singular matrix");
    if (p != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(k, c), a(p, c));
      std::swap(b[k], b[p]);
    }
    const double inv = 1.0 / a(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double m = a(r, k) * inv;
      if (m == 0.0) continue;
      a(r, k) = m;
      for (std::size_t c = k + 1; c < n; ++c) a(r, c) -= m * a(k, c);
      b[r] -= m * b[k];
    }
  }
  // back substitution
  std::vector<double> x(n, 0.0);
  for (std::size_t ir = n; ir-- > 0;) {
    double s = b[ir];
    for (std::size_t c = ir + 1; c < n; ++c) s -= a(ir, c) * x[c];
    x[ir] = s / a(ir, ir);
  }
  return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double weighted_dot(std::span<const double> a, std::span<const double> b, std::span<const double> w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

KrylovResult bicgstab(const std::function<void(std::span<const double>, std::span<double>)>& op,
                      std::span<const double> rhs, std::span<const double> diag,
                      std::span<double> x, double tol, int max_iter) {
  const std::size_t n = rhs.size();
  std::vector<double> r(n), r0(n), p(n, 0.0), v(n, 0.0), s(n), t(n), phat(n), shat(n), tmp(n);

  auto precond = [&](std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] / diag[i];
  };

  op(x, tmp);
  for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - tmp[i];
  r0 = r;

  const double bnorm = std::max(norm2(rhs), 1e-300);
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  KrylovResult res;
  res.residual = norm2(r) / bnorm;
  if (res.residual <= tol) { res.converged = true; return res; }

  for (int it = 1; it <= max_iter; ++it) {
    const double rho1 = dot(r0, r);
    if (rho1 == 0.0) break;
    if (it == 1) {
      p = r;
    } else {
      const double beta = (rho1 / rho) * (alpha / omega);
      for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    }
    rho = rho1;
    precond(p, phat);
    op(phat, v);
    alpha = rho / dot(r0, v);
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) / bnorm <= tol) {
      axpy(alpha, phat, x);
      res.converged = true;
      res.iterations = it;
      res.residual = norm2(s) / bnorm;
      return res;
    }
    precond(s, shat);
    op(shat, t);
    const double tt = dot(t, t);
    omega = tt > 0.0 ? dot(t, s) / tt : 0.0;
    for (std::size_t i = 0; i < n; ++i) x[i] += alpha * phat[i] + omega * shat[i];
    for (std::size_t i = 0; i < n; ++i) r[i] = s[i] - omega * t[i];
    res.iterations = it;
    res.residual = norm2(r) / bnorm;
    if (res.residual <= tol) { res.converged = true; return res; }
    if (omega == 0.0) break;
  }
  return res;
}

double operator_norm_power(const std::function<void(std::span<const double>, std::span<double>)>& apply,
                           const std::function<void(std::span<const double>, std::span<double>)>& apply_adjoint,
                           std::span<const double> weights, std::size_t n, std::uint64_t seed,
                           int iters) {
  Rng rng(seed);
  std::vector<double> v(n), av(n), atav(n);
  for (double& vi : v) vi = rng.normal();
  double sigma = 0.0;
  for (int k = 0; k < iters; ++k) {
    const double nv = std::sqrt(weighted_dot(v, v, weights));
    if (nv == 0.0) return 0.0;
    scale(std::span<double>(v), 1.0 / nv);
    apply(v, av);
    apply_adjoint(av, atav);
    sigma = std::sqrt(std::max(0.0, weighted_dot(atav, v, weights)));
    v = atav;
  }
  return sigma;
}

namespace {
double simpson(double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double fa, double b,
                            double fb, double m, double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, fa, m, fm, flm);
  const double right = simpson(m, fm, b, fb, frm);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, tol * 0.5, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, tol * 0.5, depth - 1);
}
}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fm = f(m);
  const double whole = simpson(a, fa, b, fb, fm);
  return adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

namespace {
std::atomic<int> g_workers{1};
}

void set_worker_threads(int n) { g_workers.store(std::max(1, n)); }
int worker_threads() { return g_workers.load(); }

void parallel_for(int n, const std::function<void(int)>& body) {
  const int workers = std::min(g_workers.load(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace csda
