#include "metasaug/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace metasaug {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

uint64_t splitmix64(uint64_t& s) {
  s += 0x9E3779B97F4A7C15ULL;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

Matrix::Matrix(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
  if (r < 0 || c < 0) throw DimensionError("Matrix: negative dimensions");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diag(const Vector& d) {
  Matrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  for (size_t i = 0; i < d.size(); ++i) m(static_cast<int>(i), static_cast<int>(i)) = d[i];
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<int>(rows.size()), rows.size() ? static_cast<int>(rows.begin()->size()) : 0);
  int r = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != m.cols)
      throw DimensionError("Matrix::from_rows: ragged rows");
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Vector Matrix::row(int r) const {
  return Vector(row_ptr(r), row_ptr(r) + cols);
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions disagree");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      double* crow = c.row_ptr(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols != static_cast<int>(x.size())) throw DimensionError("matvec: size mismatch");
  Vector y(static_cast<size_t>(a.rows), 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* row = a.row_ptr(i);
    double acc = 0.0;
    for (int j = 0; j < a.cols; ++j) acc += row[j] * x[static_cast<size_t>(j)];
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

Vector matvec_transposed(const Matrix& a, const Vector& x) {
  if (a.rows != static_cast<int>(x.size()))
    throw DimensionError("matvec_transposed: size mismatch");
  Vector y(static_cast<size_t>(a.cols), 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double xi = x[static_cast<size_t>(i)];
    if (xi == 0.0) continue;
    const double* row = a.row_ptr(i);
    for (int j = 0; j < a.cols; ++j) y[static_cast<size_t>(j)] += xi * row[j];
  }
  return y;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add: shape mismatch");
  Matrix c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

void axpy(Matrix& a, double s, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("axpy: shape mismatch");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

void axpy(Vector& a, double s, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("axpy: size mismatch");
  for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

void add_outer(Matrix& a, double s, const Vector& x, const Vector& y) {
  if (a.rows != static_cast<int>(x.size()) || a.cols != static_cast<int>(y.size()))
    throw DimensionError("add_outer: shape mismatch");
  for (int i = 0; i < a.rows; ++i) {
    const double sx = s * x[static_cast<size_t>(i)];
    if (sx == 0.0) continue;
    double* row = a.row_ptr(i);
    for (int j = 0; j < a.cols; ++j) row[j] += sx * y[static_cast<size_t>(j)];
  }
}

void add_sym_outer(Matrix& a, double s, const Vector& x, const Vector& y) {
  if (a.rows != a.cols || a.rows != static_cast<int>(x.size()) || x.size() != y.size())
    throw DimensionError("add_sym_outer: shape mismatch");
  const double h = 0.5 * s;
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double v = h * (x[static_cast<size_t>(i)] * y[static_cast<size_t>(j)] +
                            x[static_cast<size_t>(j)] * y[static_cast<size_t>(i)]);
      a(i, j) += v;
      if (i != j) a(j, i) += v;
    }
  }
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double trace(const Matrix& a) {
  if (a.rows != a.cols) throw DimensionError("trace: non-square");
  double t = 0.0;
  for (int i = 0; i < a.rows; ++i) t += a(i, i);
  return t;
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v * v;
  return std::sqrt(acc);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double quad_form(const Vector& x, const Matrix& a, const Vector& y) {
  if (a.rows != static_cast<int>(x.size()) || a.cols != static_cast<int>(y.size()))
    throw DimensionError("quad_form: shape mismatch");
  double acc = 0.0;
  for (int i = 0; i < a.rows; ++i) {
    const double* row = a.row_ptr(i);
    double inner = 0.0;
    for (int j = 0; j < a.cols; ++j) inner += row[j] * y[static_cast<size_t>(j)];
    acc += x[static_cast<size_t>(i)] * inner;
  }
  return acc;
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows != a.cols) return false;
  const double bound = tol * std::max(1.0, max_abs(a));
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > bound) return false;
  return true;
}

void require_square_symmetric(const Matrix& a, const char* who, double tol) {
  if (a.rows != a.cols)
    throw DimensionError(std::string(who) + ": matrix is not square (" +
                         std::to_string(a.rows) + "x" + std::to_string(a.cols) + ")");
  if (!is_symmetric(a, tol))
    throw DimensionError(std::string(who) + ": matrix is not symmetric within tolerance");
}

Matrix symmetrize(const Matrix& a) {
  if (a.rows != a.cols) throw DimensionError("symmetrize: non-square");
  Matrix s(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

Matrix SymSpectrum::reconstruct() const {
  const int n = eigenvectors.rows;
  Matrix scaled = eigenvectors;  // columns scaled by eigenvalues
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) scaled(i, j) *= eigenvalues[static_cast<size_t>(j)];
  return matmul(scaled, transpose(eigenvectors));
}

SymSpectrum sym_eig(const Matrix& a) {
  require_square_symmetric(a, "sym_eig");
  const int n = a.rows;
  Matrix m = a;
  Matrix q = Matrix::identity(n);
  const double norm = frobenius_norm(a);

  if (norm > 0.0) {
    const double target = 1e-12 * norm;
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      double off = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) off += 2.0 * m(i, j) * m(i, j);
      if (std::sqrt(off) < target) break;

      for (int p = 0; p < n - 1; ++p) {
        for (int qq = p + 1; qq < n; ++qq) {
          const double apq = m(p, qq);
          if (apq == 0.0) continue;
          const double theta = (m(qq, qq) - m(p, p)) / (2.0 * apq);
          const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;

          for (int k = 0; k < n; ++k) {
            const double mkp = m(k, p), mkq = m(k, qq);
            m(k, p) = c * mkp - s * mkq;
            m(k, qq) = s * mkp + c * mkq;
          }
          for (int k = 0; k < n; ++k) {
            const double mpk = m(p, k), mqk = m(qq, k);
            m(p, k) = c * mpk - s * mqk;
            m(qq, k) = s * mpk + c * mqk;
          }
          for (int k = 0; k < n; ++k) {
            const double qkp = q(k, p), qkq = q(k, qq);
            q(k, p) = c * qkp - s * qkq;
            q(k, qq) = s * qkp + c * qkq;
          }
        }
      }
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return m(i, i) > m(j, j); });

  SymSpectrum spec;
  spec.eigenvalues.resize(static_cast<size_t>(n));
  spec.eigenvectors = Matrix(n, n);
  for (int j = 0; j < n; ++j) {
    spec.eigenvalues[static_cast<size_t>(j)] = m(order[static_cast<size_t>(j)], order[static_cast<size_t>(j)]);
    for (int i = 0; i < n; ++i) spec.eigenvectors(i, j) = q(i, order[static_cast<size_t>(j)]);
  }
  return spec;
}

Matrix psd_project(const Matrix& a) {
  SymSpectrum spec = sym_eig(a);
  const double slack = 1e-13 * std::max(1.0, frobenius_norm(a));
  double min_eig = 0.0;
  for (double ev : spec.eigenvalues) min_eig = std::min(min_eig, ev);
  // Already PSD (up to round-off): return the input untouched so applying
  // the projection twice gives a bitwise-equal result.
  if (min_eig >= -slack) return a;

  for (double& ev : spec.eigenvalues) ev = std::max(ev, 0.0);
  return symmetrize(spec.reconstruct());
}

namespace {
// Plain lower Cholesky; pivots within tol of zero produce a zero column so
// rank-deficient PSD matrices decompose too.
std::optional<Matrix> cholesky_once(const Matrix& a) {
  const int n = a.rows;
  double max_diag = 0.0;
  for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double zero_tol = 1e-14 * std::max(1.0, max_diag);

  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -zero_tol) return std::nullopt;
    if (d <= zero_tol) {
      l(j, j) = 0.0;
      continue;  // remaining entries of the column stay zero
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (int k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}
}  // namespace

std::optional<Matrix> cholesky(const Matrix& a) {
  require_square_symmetric(a, "cholesky");
  if (auto l = cholesky_once(a)) return l;
  const int n = a.rows;
  double jitter = 1e-12 * trace(a) / std::max(1, n);
  if (jitter <= 0.0) jitter = 1e-12;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    Matrix j = a;
    for (int i = 0; i < n; ++i) j(i, i) += jitter;
    if (auto l = cholesky_once(j)) return l;
  }
  return std::nullopt;
}

Rng::Rng(uint64_t seed) : seed_(seed), state_(seed) {}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
  // Rejection keeps the draw exactly uniform.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n) throw Error("sample_without_replacement: need 0 <= k <= n");
  // Partial Fisher-Yates over an index pool.
  std::vector<int> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int j = i + uniform_int(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

Rng Rng::child() {
  uint64_t s = seed_ + 0x9E3779B97F4A7C15ULL * (++children_ + 1);
  // One extra scramble so child streams do not overlap the parent.
  uint64_t mix = s;
  return Rng(splitmix64(mix) ^ 0xA5A5A5A5A5A5A5A5ULL);
}

Matrix sample_gaussian(const Vector& mean, const Matrix& cov, double scale, int n, Rng& rng) {
  const int d = static_cast<int>(mean.size());
  if (cov.rows != d || cov.cols != d)
    throw DimensionError("sample_gaussian: covariance shape does not match mean");
  if (scale < 0.0) throw Error("sample_gaussian: negative scale");
  if (n < 0) throw Error("sample_gaussian: negative sample count");

  Matrix out(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out(i, j) = mean[static_cast<size_t>(j)];
  if (scale == 0.0) return out;

  auto l = cholesky(cov);
  if (!l) throw DecompositionError("sample_gaussian: covariance is not PSD after jitter retries");
  const double root_scale = std::sqrt(scale);

  Vector z(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z[static_cast<size_t>(j)] = rng.normal();
    double* row = out.row_ptr(i);
    for (int r = 0; r < d; ++r) {
      const double* lrow = l->row_ptr(r);
      double acc = 0.0;
      for (int c = 0; c <= r; ++c) acc += lrow[c] * z[static_cast<size_t>(c)];
      row[r] += root_scale * acc;
    }
  }
  return out;
}

}  // namespace metasaug
