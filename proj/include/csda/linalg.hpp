#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace csda {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double xx, double yy, double zz) : x(xx), y(yy), z(zz) {}

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(const Vec3& v);
Vec3 normalized(const Vec3& v);

/// Column-major is unnecessary at these sizes; plain row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), a_(rows * cols, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  DenseMatrix transposed() const;
  std::vector<double> apply(std::span<const double> x) const;
  double max_abs_diff(const DenseMatrix& other) const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

/// LU solve with partial pivoting; throws on singular pivot.
std::vector<double> lu_solve(DenseMatrix a, std::vector<double> b);

struct KrylovResult {
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

/// Right-preconditioned BiCGStab with a diagonal preconditioner.
/// `op` computes y = A x; `diag` holds the matrix diagonal (Jacobi).
KrylovResult bicgstab(const std::function<void(std::span<const double>, std::span<double>)>& op,
                      std::span<const double> rhs, std::span<const double> diag,
                      std::span<double> x, double tol, int max_iter);

// Basic vector helpers used across modules.
double dot(std::span<const double> a, std::span<const double> b);
double weighted_dot(std::span<const double> a, std::span<const double> b, std::span<const double> w);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> x, double alpha);

/// Largest singular value of the operator pair (apply, apply_adjoint) in the
/// W-weighted inner product, by power iteration on A*A.
double operator_norm_power(const std::function<void(std::span<const double>, std::span<double>)>& apply,
                           const std::function<void(std::span<const double>, std::span<double>)>& apply_adjoint,
                           std::span<const double> weights, std::size_t n, std::uint64_t seed,
                           int iters = 120);

/// Adaptive Simpson quadrature, absolute tolerance.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth = 40);

/// Worker-thread cap for the parallel loops (sweeps, operator applications).
/// Outputs are written to disjoint slots, so results are thread-count
/// independent.
void set_worker_threads(int n);
int worker_threads();
void parallel_for(int n, const std::function<void(int)>& body);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * (static_cast<double>(gen_() >> 11) * 0x1.0p-53);
  }
  double normal() {
    // Marsaglia polar; avoids distribution-object state for reproducibility.
    for (;;) {
      const double u = uniform(-1.0, 1.0), v = uniform(-1.0, 1.0);
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace csda
