#include <doctest.h>

#include <cmath>
#include <vector>

#include "metasaug/covariance.hpp"
#include "metasaug/losses.hpp"

using namespace metasaug;

namespace {

// Long-double softmax cross-entropy, an independent high-precision oracle.
long double ce_reference(const Vector& logits, int y) {
  long double m = logits[0];
  for (double z : logits) m = std::max(m, static_cast<long double>(z));
  long double sum = 0.0L;
  for (double z : logits) sum += expl(static_cast<long double>(z) - m);
  return logl(sum) - (static_cast<long double>(logits[static_cast<size_t>(y)]) - m);
}

Vector softmax_reference(const Vector& logits) {
  long double m = logits[0];
  for (double z : logits) m = std::max(m, static_cast<long double>(z));
  long double sum = 0.0L;
  for (double z : logits) sum += expl(static_cast<long double>(z) - m);
  Vector p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    p[i] = static_cast<double>(expl(static_cast<long double>(logits[i]) - m) / sum);
  return p;
}

CovarianceBank bank_of(const std::vector<Matrix>& sigma, double lambda) {
  CovarianceBank bank = learnable_bank_zero(static_cast<int>(sigma.size()), sigma[0].rows,
                                            lambda, PsdPolicy::kNone);
  bank.sigma = sigma;
  std::fill(bank.cold.begin(), bank.cold.end(), 0);
  return bank;
}

}  // namespace

TEST_CASE("cross-entropy against a long-double reference") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + rng.uniform_int(6);
    Vector z(static_cast<size_t>(c));
    for (double& v : z) v = 4.0 * rng.normal();
    const int y = rng.uniform_int(c);
    const LossEval e = ce_loss(z, y);
    const double ref = static_cast<double>(ce_reference(z, y));
    CHECK(e.loss == doctest::Approx(ref).epsilon(1e-13));

    // Gradient is softmax minus the one-hot target and sums to zero.
    const Vector p = softmax_reference(z);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      const double expect = p[static_cast<size_t>(k)] - (k == y ? 1.0 : 0.0);
      CHECK(e.dlogits[static_cast<size_t>(k)] == doctest::Approx(expect).epsilon(1e-12));
      sum += e.dlogits[static_cast<size_t>(k)];
    }
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("cross-entropy stays finite at extreme logits") {
  const Vector z = {1000.0, 0.0, -1000.0};
  CHECK(ce_loss(z, 0).loss == doctest::Approx(0.0).epsilon(1e-12));
  const LossEval far = ce_loss(z, 2);
  CHECK(far.loss == doctest::Approx(2000.0).epsilon(1e-12));
  CHECK(std::isfinite(far.dlogits[0]));
}

TEST_CASE("focal with zero gamma is cross-entropy bitwise") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    Vector z(4);
    for (double& v : z) v = 3.0 * rng.normal();
    const int y = rng.uniform_int(4);
    const LossEval f = focal_loss(z, y, 0.0);
    const LossEval c = ce_loss(z, y);
    CHECK(f.loss == c.loss);
    CHECK(f.dlogits == c.dlogits);
  }
}

TEST_CASE("focal value matches the direct formula") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    Vector z(5);
    for (double& v : z) v = 2.0 * rng.normal();
    const int y = rng.uniform_int(5);
    const double gamma = 0.5 + 2.0 * rng.uniform();
    const Vector p = softmax_reference(z);
    const double py = p[static_cast<size_t>(y)];
    const double expect = -std::pow(1.0 - py, gamma) * std::log(py);
    CHECK(focal_loss(z, y, gamma).loss == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("focal gradient matches finite differences") {
  Rng rng(24);
  const double h = 1e-6;
  for (int trial = 0; trial < 15; ++trial) {
    Vector z(4);
    for (double& v : z) v = 2.0 * rng.normal();
    const int y = rng.uniform_int(4);
    const double gamma = 0.5 + 2.0 * rng.uniform();
    const LossEval e = focal_loss(z, y, gamma);
    for (size_t k = 0; k < z.size(); ++k) {
      const double saved = z[k];
      z[k] = saved + h;
      const double up = focal_loss(z, y, gamma).loss;
      z[k] = saved - h;
      const double dn = focal_loss(z, y, gamma).loss;
      z[k] = saved;
      CHECK(e.dlogits[k] == doctest::Approx((up - dn) / (2.0 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("focal saturates cleanly when the target probability reaches 1") {
  // Margin so large that (1 - p_y) underflows to exactly 0.
  const Vector z = {800.0, 0.0, -200.0};
  const LossEval e = focal_loss(z, 0, 2.0);
  CHECK(e.loss == 0.0);
  for (double g : e.dlogits) CHECK(g == 0.0);
}

TEST_CASE("margin schedule follows n^{-1/4} with the rarest at max_margin") {
  const std::vector<int> counts = {625, 16, 1};
  const double scale = ldam_margin_scale(counts, 0.5);
  const Vector m = ldam_margins(counts, scale);
  CHECK(m[2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m[0] == doctest::Approx(0.5 / 5.0).epsilon(1e-12));
  CHECK(m[1] == doctest::Approx(0.5 / 2.0).epsilon(1e-12));
}

TEST_CASE("margin adjustment shifts only the true class") {
  const Vector z = {1.0, 2.0, 3.0};
  const Vector m = {0.1, 0.2, 0.3};
  const Vector adj = ldam_adjust(z, 1, m);
  CHECK(adj[0] == 1.0);
  CHECK(adj[1] == doctest::Approx(1.8));
  CHECK(adj[2] == 3.0);
}

TEST_CASE("margin loss is cross-entropy at the shifted logits") {
  Rng rng(25);
  const std::vector<int> counts = {100, 10, 2};
  const BaseLoss ldam = BaseLoss::ldam(counts, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    Vector z(3);
    for (double& v : z) v = 2.0 * rng.normal();
    const int y = rng.uniform_int(3);
    const LossEval e = base_loss(ldam, z, y);
    const LossEval ref = ce_loss(ldam_adjust(z, y, ldam.margins), y);
    CHECK(e.loss == ref.loss);
    CHECK(e.dlogits == ref.dlogits);
  }
}

TEST_CASE("loss curvature along a direction matches finite differences") {
  Rng rng(26);
  const double h = 1e-5;
  const std::vector<int> counts = {50, 5, 2, 30};
  const std::vector<BaseLoss> bases = {BaseLoss::cross_entropy(), BaseLoss::focal(1.7),
                                       BaseLoss::ldam(counts, 0.5)};
  for (const BaseLoss& base : bases) {
    for (int trial = 0; trial < 15; ++trial) {
      Vector z(4), v(4);
      for (double& x : z) x = 2.0 * rng.normal();
      for (double& x : v) x = rng.normal();
      const int y = rng.uniform_int(4);

      const Vector hv = base_loss_hessian_dir(base, z, y, v);
      Vector zp = z, zm = z;
      for (size_t k = 0; k < z.size(); ++k) {
        zp[k] += h * v[k];
        zm[k] -= h * v[k];
      }
      const Vector gp = base_loss(base, zp, y).dlogits;
      const Vector gm = base_loss(base, zm, y).dlogits;
      for (size_t k = 0; k < z.size(); ++k) {
        const double fd = (gp[k] - gm[k]) / (2.0 * h);
        CHECK(hv[k] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
      }
    }
  }
}

TEST_CASE("effective-number weights: known values") {
  const ClassWeights all_one = effective_number_weights({5, 50, 500}, 0.0, false);
  for (double e : all_one.eps) CHECK(e == 1.0);

  // beta = 1/2, n = 2: (1/2) / (3/4) = 2/3.
  const ClassWeights w = effective_number_weights({2}, 0.5, false);
  CHECK(w.eps[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const ClassWeights single = effective_number_weights({1}, 0.9999, false);
  CHECK(single.eps[0] == 1.0);
}

TEST_CASE("effective-number weights: normalization to mean one") {
  const ClassWeights w = effective_number_weights({500, 50, 5}, 0.99, true);
  double mean = 0.0;
  for (double e : w.eps) mean += e / 3.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(1e-14));
  // Rarer classes weigh more.
  CHECK(w.eps[2] > w.eps[1]);
  CHECK(w.eps[1] > w.eps[0]);
}

TEST_CASE("effective-number weights: invalid inputs") {
  CHECK_THROWS_AS(effective_number_weights({5}, 1.0, false), ConfigError);
  CHECK_THROWS_AS(effective_number_weights({5}, -0.1, false), ConfigError);
  CHECK_THROWS_AS(effective_number_weights({0}, 0.5, false), ConfigError);
  CHECK_THROWS_AS(effective_number_weights({}, 0.5, false), ConfigError);
}

TEST_CASE("augmented loss: true-class adjustment is exactly zero") {
  Rng rng(27);
  Matrix features(3, 2);
  for (double& v : features.data) v = rng.normal();
  const std::vector<int> labels = {0, 1, 0};
  Matrix w(2, 2);
  for (double& v : w.data) v = rng.normal();
  const Vector b = {0.1, -0.2};
  const CovarianceBank bank = bank_of({Matrix::identity(2), Matrix::identity(2)}, 0.7);

  const IsdaEval e = isda_linf(features, labels, w, b, bank, BaseLoss::cross_entropy());
  for (int i = 0; i < 3; ++i)
    CHECK(e.delta(i, labels[static_cast<size_t>(i)]) == 0.0);
  CHECK(e.negative_delta_count == 0);
}

TEST_CASE("augmented loss: adjustment value by hand") {
  // One sample of class 0; identity covariance; the class-1 logit gains
  // (lambda / 2) * ||w_1 - w_0||^2.
  Matrix features(1, 2);
  features(0, 0) = 1.0;
  features(0, 1) = 0.0;
  Matrix w = Matrix::from_rows({{1.0, 0.0}, {0.0, 2.0}});
  const Vector b = {0.0, 0.0};
  const CovarianceBank bank = bank_of({Matrix::identity(2), Matrix::identity(2)}, 2.0);

  const IsdaEval e = isda_linf(features, {0}, w, b, bank, BaseLoss::cross_entropy());
  // w_1 - w_0 = (-1, 2), squared norm 5, lambda/2 = 1.
  CHECK(e.delta(0, 1) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(e.adjusted(0, 1) == doctest::Approx(e.delta(0, 1) + 0.0).epsilon(1e-14));
  CHECK(e.adjusted(0, 0) == 1.0);
  // rho is the base-loss gradient at the adjusted logits.
  const LossEval at_adjusted = ce_loss(e.adjusted.row(0), 0);
  CHECK(e.rho.row(0) == at_adjusted.dlogits);
  CHECK(e.losses[0] == at_adjusted.loss);
}

TEST_CASE("augmented loss: indefinite covariance is counted or rejected") {
  Matrix features(1, 2);
  features(0, 0) = 1.0;
  Matrix w = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const Vector b = {0.0, 0.0};
  const CovarianceBank bad = bank_of({Matrix::diag({-1.0, -1.0}), Matrix::identity(2)}, 1.0);

  const IsdaEval e = isda_linf(features, {0}, w, b, bad, BaseLoss::cross_entropy());
  CHECK(e.negative_delta_count > 0);
  CHECK_THROWS_AS(
      isda_linf(features, {0}, w, b, bad, BaseLoss::cross_entropy(), true),
      DecompositionError);
}

TEST_CASE("augmented loss: sample permutation permutes the evaluation") {
  Rng rng(28);
  const int n = 6, d = 3, c = 3;
  Matrix features(n, d);
  for (double& v : features.data) v = rng.normal();
  std::vector<int> labels(n);
  for (int& y : labels) y = rng.uniform_int(c);
  Matrix w(c, d);
  for (double& v : w.data) v = rng.normal();
  Vector b(c);
  for (double& v : b) v = rng.normal();
  std::vector<Matrix> sig;
  for (int k = 0; k < c; ++k) {
    Matrix s(d, d);
    Vector u(static_cast<size_t>(d));
    for (double& x : u) x = rng.normal();
    add_sym_outer(s, 1.0, u, u);
    sig.push_back(s);
  }
  const CovarianceBank bank = bank_of(sig, 0.5);

  const std::vector<int> perm = {4, 2, 0, 5, 1, 3};
  Matrix pf(n, d);
  std::vector<int> pl(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) pf(i, j) = features(perm[static_cast<size_t>(i)], j);
    pl[static_cast<size_t>(i)] = labels[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }

  const BaseLoss base = BaseLoss::cross_entropy();
  const IsdaEval e1 = isda_linf(features, labels, w, b, bank, base);
  const IsdaEval e2 = isda_linf(pf, pl, w, b, bank, base);
  for (int i = 0; i < n; ++i)
    CHECK(e2.losses[static_cast<size_t>(i)] ==
          e1.losses[static_cast<size_t>(perm[static_cast<size_t>(i)])]);

  // Accumulated gradients agree up to summation order.
  const IsdaGradients g1 = isda_gradients(features, labels, w, b, bank, base);
  const IsdaGradients g2 = isda_gradients(pf, pl, w, b, bank, base);
  CHECK(max_abs_diff(g1.w, g2.w) < 1e-12);
  for (int k = 0; k < c; ++k)
    CHECK(max_abs_diff(g1.sigma[static_cast<size_t>(k)], g2.sigma[static_cast<size_t>(k)]) <
          1e-12);
}

TEST_CASE("covariance gradients are exactly symmetric") {
  Rng rng(29);
  const int n = 4, d = 3, c = 3;
  Matrix features(n, d);
  for (double& v : features.data) v = rng.normal();
  std::vector<int> labels = {0, 1, 2, 0};
  Matrix w(c, d);
  for (double& v : w.data) v = rng.normal();
  Vector b(c, 0.0);
  std::vector<Matrix> sig(3, Matrix::identity(d));
  const IsdaGradients g =
      isda_gradients(features, labels, w, b, bank_of(sig, 0.8), BaseLoss::cross_entropy());
  for (const Matrix& gs : g.sigma) {
    for (int i = 0; i < gs.rows; ++i)
      for (int j = 0; j < gs.cols; ++j) CHECK(gs(i, j) == gs(j, i));
  }
}

TEST_CASE("weighted batch loss: reductions and class weights") {
  Rng rng(30);
  const int n = 5, d = 2, c = 2;
  Matrix features(n, d);
  for (double& v : features.data) v = rng.normal();
  std::vector<int> labels = {0, 1, 0, 1, 0};
  Matrix w(c, d);
  for (double& v : w.data) v = rng.normal();
  Vector b(c, 0.0);
  const CovarianceBank bank = bank_of({Matrix::identity(d), Matrix::identity(d)}, 0.4);
  const BaseLoss base = BaseLoss::cross_entropy();

  const Vector eps = {2.0, 0.5};
  const BatchLoss sum = weighted_batch_loss(features, labels, w, b, bank, eps, base,
                                            Reduction::kSum);
  const BatchLoss mean = weighted_batch_loss(features, labels, w, b, bank, eps, base,
                                             Reduction::kMean);

  const IsdaEval plain = isda_linf(features, labels, w, b, bank, base);
  double expect_sum = 0.0;
  for (int i = 0; i < n; ++i)
    expect_sum += eps[static_cast<size_t>(labels[static_cast<size_t>(i)])] *
                  plain.losses[static_cast<size_t>(i)];
  CHECK(sum.value == doctest::Approx(expect_sum).epsilon(1e-14));
  CHECK(mean.value == doctest::Approx(expect_sum / n).epsilon(1e-14));
  CHECK(sum.per_sample == plain.losses);

  // Mean gradients are the sum gradients scaled by 1/n.
  CHECK(max_abs_diff(scale(sum.grads.w, 1.0 / n), mean.grads.w) < 1e-15);

  // Empty weights mean unweighted.
  const BatchLoss unweighted = weighted_batch_loss(features, labels, w, b, bank, {}, base,
                                                   Reduction::kSum);
  double expect_plain = 0.0;
  for (double l : plain.losses) expect_plain += l;
  CHECK(unweighted.value == doctest::Approx(expect_plain).epsilon(1e-14));
}

TEST_CASE("sampled bound collapses exactly at zero strength") {
  Rng rng(31);
  Matrix features(2, 3);
  for (double& v : features.data) v = rng.normal();
  const std::vector<int> labels = {0, 1};
  Matrix w(2, 3);
  for (double& v : w.data) v = rng.normal();
  Vector b(2, 0.0);
  const CovarianceBank bank = bank_of({Matrix::identity(3), Matrix::identity(3)}, 0.0);

  Rng mc(99);
  const BoundCheck bc = monte_carlo_bound_check(features, labels, w, b, bank, 500, mc);
  for (size_t i = 0; i < bc.upper.size(); ++i) {
    CHECK(bc.mc_mean[i] == bc.upper[i]);
    CHECK(bc.mc_se[i] == 0.0);
  }
  CHECK(bc.bound_holds);
  CHECK(bc.moment_holds);
}

TEST_CASE("sampled bound holds on a random PSD instance") {
  Rng rng(32);
  Matrix features(2, 3);
  for (double& v : features.data) v = rng.normal();
  const std::vector<int> labels = {1, 0};
  Matrix w(3, 3);
  for (double& v : w.data) v = rng.normal();
  Vector b(3, 0.0);
  std::vector<Matrix> sig;
  for (int k = 0; k < 3; ++k) {
    Matrix s(3, 3);
    for (int r = 0; r < 3; ++r) {
      Vector u(3);
      for (double& x : u) x = 0.6 * rng.normal();
      add_sym_outer(s, 1.0 / 3.0, u, u);
    }
    sig.push_back(s);
  }
  const CovarianceBank bank = bank_of(sig, 0.6);

  Rng mc(100);
  const BoundCheck bc = monte_carlo_bound_check(features, labels, w, b, bank, 20000, mc);
  CHECK(bc.bound_holds);
  CHECK(bc.moment_holds);
  CHECK(bc.worst_bound_gap <= 3.0 * *std::max_element(bc.mc_se.begin(), bc.mc_se.end()));
}
