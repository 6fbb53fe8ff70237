#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "metasaug/numerics.hpp"

using namespace metasaug;

namespace {

Matrix random_sym(int d, Rng& rng) {
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.normal();
      a(i, j) = v;
      a(j, i) = v;
    }
  return a;
}

Matrix random_psd(int d, Rng& rng) {
  Matrix s(d, d);
  for (int r = 0; r < d; ++r) {
    Vector v(static_cast<size_t>(d));
    for (double& x : v) x = rng.normal();
    add_sym_outer(s, 1.0 / d, v, v);
  }
  return s;
}

// Cofactor expansion; independent of any decomposition, fine for d <= 6.
double det_cofactor(const Matrix& a) {
  const int n = a.rows;
  if (n == 1) return a(0, 0);
  double det = 0.0;
  for (int c = 0; c < n; ++c) {
    Matrix minor(n - 1, n - 1);
    for (int i = 1; i < n; ++i) {
      int mc = 0;
      for (int j = 0; j < n; ++j) {
        if (j == c) continue;
        minor(i - 1, mc++) = a(i, j);
      }
    }
    det += (c % 2 == 0 ? 1.0 : -1.0) * a(0, c) * det_cofactor(minor);
  }
  return det;
}

}  // namespace

TEST_CASE("matrix constructors and accessors") {
  Matrix m(2, 3, 1.5);
  CHECK(m.rows == 2);
  CHECK(m.cols == 3);
  CHECK(m(1, 2) == 1.5);

  const Matrix id = Matrix::identity(3);
  CHECK(id(0, 0) == 1.0);
  CHECK(id(0, 1) == 0.0);

  const Matrix d = Matrix::diag({2.0, 3.0});
  CHECK(d(0, 0) == 2.0);
  CHECK(d(1, 1) == 3.0);
  CHECK(d(1, 0) == 0.0);

  const Matrix f = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  CHECK(f(1, 0) == 3.0);
  CHECK(f.row(1) == Vector{3.0, 4.0});
}

TEST_CASE("matmul and matvec against naive loops") {
  Rng rng(11);
  const Matrix a = [&] {
    Matrix m(3, 4);
    for (double& v : m.data) v = rng.normal();
    return m;
  }();
  const Matrix b = [&] {
    Matrix m(4, 2);
    for (double& v : m.data) v = rng.normal();
    return m;
  }();
  const Matrix c = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }

  Vector x = {1.0, -2.0, 0.5, 3.0};
  const Vector y = matvec(a, x);
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += a(i, k) * x[static_cast<size_t>(k)];
    CHECK(y[static_cast<size_t>(i)] == doctest::Approx(acc).epsilon(1e-14));
  }

  Vector z = {1.0, -1.0, 2.0};
  const Vector t = matvec_transposed(a, z);
  for (int j = 0; j < 4; ++j) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) acc += a(i, j) * z[static_cast<size_t>(i)];
    CHECK(t[static_cast<size_t>(j)] == doctest::Approx(acc).epsilon(1e-14));
  }

  CHECK_THROWS_AS(matmul(a, a), DimensionError);
  CHECK_THROWS_AS(matvec(a, z), DimensionError);
}

TEST_CASE("quad_form uses the matrix as stored") {
  // Asymmetric on purpose: x^T A y must read entry (p, q), not its mirror.
  const Matrix a = Matrix::from_rows({{1.0, 5.0}, {0.0, 2.0}});
  const Vector x = {1.0, 1.0};
  const Vector y = {1.0, 1.0};
  CHECK(quad_form(x, a, y) == doctest::Approx(8.0));
}

TEST_CASE("add_sym_outer stays exactly symmetric") {
  Rng rng(3);
  Matrix s(5, 5);
  for (int k = 0; k < 40; ++k) {
    Vector x(5), y(5);
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal();
    add_sym_outer(s, 0.3, x, y);
  }
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(s(i, j) == s(j, i));
}

TEST_CASE("symmetric eigendecomposition certificate") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const int d = 2 + rng.uniform_int(4);
    const Matrix a = random_sym(d, rng);
    const SymSpectrum sp = sym_eig(a);

    REQUIRE(static_cast<int>(sp.eigenvalues.size()) == d);
    for (int i = 0; i + 1 < d; ++i)
      CHECK(sp.eigenvalues[static_cast<size_t>(i)] >= sp.eigenvalues[static_cast<size_t>(i + 1)]);

    // Residual A q = lambda q per column.
    const double norm = std::max(1.0, frobenius_norm(a));
    for (int j = 0; j < d; ++j) {
      Vector q(static_cast<size_t>(d));
      for (int i = 0; i < d; ++i) q[static_cast<size_t>(i)] = sp.eigenvectors(i, j);
      const Vector aq = matvec(a, q);
      for (int i = 0; i < d; ++i)
        CHECK(std::abs(aq[static_cast<size_t>(i)] -
                       sp.eigenvalues[static_cast<size_t>(j)] * q[static_cast<size_t>(i)]) <=
              1e-9 * norm);
    }

    // Orthonormal columns.
    const Matrix qtq = matmul(transpose(sp.eigenvectors), sp.eigenvectors);
    CHECK(max_abs_diff(qtq, Matrix::identity(d)) <= 1e-10);

    // Trace and determinant identities give an independent cross-check.
    double lam_sum = 0.0, lam_prod = 1.0;
    for (double l : sp.eigenvalues) {
      lam_sum += l;
      lam_prod *= l;
    }
    CHECK(lam_sum == doctest::Approx(trace(a)).epsilon(1e-10));
    CHECK(lam_prod == doctest::Approx(det_cofactor(a)).epsilon(1e-8));

    CHECK(max_abs_diff(sp.reconstruct(), a) <= 1e-9 * norm);
  }
}

TEST_CASE("sym_eig on a known 2x2") {
  const Matrix a = Matrix::from_rows({{2.0, 1.0}, {1.0, 2.0}});
  const SymSpectrum sp = sym_eig(a);
  CHECK(sp.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(sp.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sym_eig rejects asymmetric input") {
  const Matrix a = Matrix::from_rows({{1.0, 2.0}, {0.0, 1.0}});
  CHECK_THROWS_AS(sym_eig(a), DimensionError);
}

TEST_CASE("psd projection clips negatives and is idempotent") {
  const Matrix a = Matrix::diag({1.0, -1.0});
  const Matrix p = psd_project(a);
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p(1, 1) == doctest::Approx(0.0).epsilon(1e-12));

  // Already-PSD input comes back bitwise untouched.
  Rng rng(5);
  const Matrix s = random_psd(4, rng);
  const Matrix s2 = psd_project(s);
  CHECK(s2 == s);

  // Projecting twice equals projecting once.
  const Matrix p2 = psd_project(p);
  CHECK(p2 == p);

  // The projection of a mixed-sign matrix is PSD.
  const Matrix mixed = random_sym(5, rng);
  const SymSpectrum sp = sym_eig(psd_project(mixed));
  for (double l : sp.eigenvalues) CHECK(l >= -1e-10);
}

TEST_CASE("cholesky reconstructs and survives marginal matrices") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix s = random_psd(4, rng);
    const auto l = cholesky(s);
    REQUIRE(l.has_value());
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) CHECK((*l)(i, j) == 0.0);
    CHECK(max_abs_diff(matmul(*l, transpose(*l)), s) <= 1e-9 * std::max(1.0, frobenius_norm(s)));
  }

  // Rank-one: exactly singular, must still factor (zero pivot column).
  const Matrix rank1 = Matrix::from_rows({{1.0, 1.0}, {1.0, 1.0}});
  const auto l1 = cholesky(rank1);
  REQUIRE(l1.has_value());
  CHECK(max_abs_diff(matmul(*l1, transpose(*l1)), rank1) <= 1e-6);

  // Clearly indefinite input fails even with jitter.
  CHECK(!cholesky(Matrix::diag({1.0, -1.0})).has_value());
}

TEST_CASE("rng determinism and child independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng parent(42);
  Rng c1 = parent.child();
  Rng c2 = parent.child();
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs = differs || c1.next_u64() != c2.next_u64();
  CHECK(differs);
}

TEST_CASE("rng distribution ranges") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int k = rng.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }

  // Box-Muller moments, loose Monte-Carlo bounds.
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("sample_without_replacement is a valid subset") {
  Rng rng(31);
  const std::vector<int> picks = rng.sample_without_replacement(20, 8);
  CHECK(picks.size() == 8);
  std::set<int> seen(picks.begin(), picks.end());
  CHECK(seen.size() == 8);
  for (int p : picks) {
    CHECK(p >= 0);
    CHECK(p < 20);
  }
  // Drawing everything permutes the full range.
  const std::vector<int> all = rng.sample_without_replacement(5, 5);
  std::set<int> whole(all.begin(), all.end());
  CHECK(whole.size() == 5);
}

TEST_CASE("sample_gaussian with zero scale copies the mean exactly") {
  Rng rng(7);
  Rng probe(7);
  const Matrix cov = Matrix::identity(3);
  const Vector mean = {1.0, -2.0, 0.25};
  const Matrix draws = sample_gaussian(mean, cov, 0.0, 4, rng);
  REQUIRE(draws.rows == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) CHECK(draws(i, j) == mean[static_cast<size_t>(j)]);
  // The Gaussian stream is untouched: the next draw matches a fresh rng.
  CHECK(rng.next_u64() == probe.next_u64());
}

TEST_CASE("sample_gaussian empirical moments") {
  Rng rng(13);
  const Matrix cov = Matrix::from_rows({{2.0, 0.5}, {0.5, 1.0}});
  const Vector mean = {3.0, -1.0};
  const double scale = 0.5;
  const int n = 40000;
  const Matrix draws = sample_gaussian(mean, cov, scale, n, rng);

  Vector emp_mean(2, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) emp_mean[static_cast<size_t>(j)] += draws(i, j);
  for (double& v : emp_mean) v /= n;
  CHECK(emp_mean[0] == doctest::Approx(3.0).epsilon(0.02));
  CHECK(emp_mean[1] == doctest::Approx(-1.0).epsilon(0.02));

  Matrix emp_cov(2, 2);
  for (int i = 0; i < n; ++i) {
    Vector d = {draws(i, 0) - emp_mean[0], draws(i, 1) - emp_mean[1]};
    add_outer(emp_cov, 1.0 / n, d, d);
  }
  // Expected covariance is scale * cov.
  CHECK(emp_cov(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(emp_cov(1, 1) == doctest::Approx(0.5).epsilon(0.05));
  CHECK(emp_cov(0, 1) == doctest::Approx(0.25).epsilon(0.12));
}

TEST_CASE("norm helpers") {
  const Matrix a = Matrix::from_rows({{3.0, 0.0}, {0.0, -4.0}});
  CHECK(frobenius_norm(a) == doctest::Approx(5.0));
  CHECK(max_abs(a) == 4.0);
  CHECK(trace(a) == -1.0);
  const Matrix b = Matrix::from_rows({{3.0, 0.5}, {0.0, -4.0}});
  CHECK(max_abs_diff(a, b) == 0.5);
  CHECK(is_symmetric(a));
  CHECK(!is_symmetric(b));
  CHECK(symmetrize(b)(0, 1) == doctest::Approx(0.25));
}
