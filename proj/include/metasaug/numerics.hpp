// Dense small-matrix linear algebra and seeded randomness used by every
// other module. All floating point work is double precision; matrices are
// row-major and at most a few hundred square, so the routines favour
// accuracy and determinism over throughput.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <vector>

#include "metasaug/errors.hpp"

namespace metasaug {

using Vector = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);

  static Matrix identity(int n);
  static Matrix diag(const Vector& d);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  Vector row(int r) const;
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
};

bool operator==(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, const Vector& x);
// y = A^T x for A with rows matching x.
Vector matvec_transposed(const Matrix& a, const Vector& x);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
// a += s * b, in place.
void axpy(Matrix& a, double s, const Matrix& b);
void axpy(Vector& a, double s, const Vector& b);
// a += s * x y^T, in place.
void add_outer(Matrix& a, double s, const Vector& x, const Vector& y);
// a += s * (x y^T + y x^T) / 2; keeps a exactly symmetric.
void add_sym_outer(Matrix& a, double s, const Vector& x, const Vector& y);

double dot(const Vector& a, const Vector& b);
double trace(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
// x^T A y without forming intermediates; A used as stored (no implicit
// symmetrisation), so slightly perturbed inputs evaluate as written.
double quad_form(const Vector& x, const Matrix& a, const Vector& y);

bool is_symmetric(const Matrix& a, double tol = 1e-10);
void require_square_symmetric(const Matrix& a, const char* who, double tol = 1e-10);
// (A + A^T) / 2
Matrix symmetrize(const Matrix& a);

// Eigendecomposition of a symmetric matrix. Eigenvalues come back in
// descending order with matching orthonormal eigenvector columns.
struct SymSpectrum {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalues[j]

  // Q diag(eigenvalues) Q^T
  Matrix reconstruct() const;
};

// Cyclic Jacobi rotations; converged when the off-diagonal Frobenius norm
// drops below 1e-12 * ||A||_F. Throws DimensionError on non-square or
// asymmetric input.
SymSpectrum sym_eig(const Matrix& a);

// Nearest positive-semidefinite matrix in Frobenius norm: eigenvalues below
// zero are clipped. Returns the input unchanged when no clipping is needed,
// which makes the projection exactly idempotent.
Matrix psd_project(const Matrix& a);

// Lower-triangular L with L L^T = A. Diagonal jitter of 1e-12*trace(A)/d is
// added on failure and grown 10x, up to 3 retries, to absorb matrices that
// drift marginally outside the PSD cone. nullopt when all retries fail.
std::optional<Matrix> cholesky(const Matrix& a);

// Deterministic random stream. Identical seeds give identical sequences on
// every platform: the generator is splitmix64 and all distributions are
// built from it by hand (standard-library distributions are not
// reproducible across implementations). Single-owner by convention; derive
// child streams instead of sharing.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Standard normal via Box-Muller (no cached spare; two uniforms per draw).
  double normal();
  // Uniform integer in [0, n).
  int uniform_int(int n);
  // k distinct indices from [0, n), order randomised.
  std::vector<int> sample_without_replacement(int n, int k);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }
  // Independent stream; successive calls derive distinct children.
  Rng child();

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  uint64_t children_ = 0;
};

// n rows, each mean + delta with delta ~ N(0, scale * cov). scale == 0
// returns n copies of mean without touching the rng's Gaussian stream.
// Throws DecompositionError when cov is not PSD after jitter retries.
Matrix sample_gaussian(const Vector& mean, const Matrix& cov, double scale, int n, Rng& rng);

}  // namespace metasaug
