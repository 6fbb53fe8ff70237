#include "metasaug/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace metasaug {

ClassWeights effective_number_weights(const std::vector<int>& counts, double beta,
                                      bool normalize_to_mean) {
  if (beta < 0.0 || beta >= 1.0)
    throw ConfigError("effective_number_weights: beta must lie in [0, 1)");
  if (counts.empty()) throw ConfigError("effective_number_weights: no classes");

  ClassWeights w;
  w.beta = beta;
  w.eps.reserve(counts.size());
  for (int n : counts) {
    if (n < 1) throw ConfigError("effective_number_weights: counts must be >= 1");
    // n == 1 gives (1-beta)/(1-beta); emit the exact 1 without dividing.
    // 1 - beta^n via expm1/log1p keeps full precision when beta is close
    // to 1, where the direct subtraction cancels.
    const double one_minus_pow = -std::expm1(static_cast<double>(n) * std::log1p(beta - 1.0));
    w.eps.push_back(n == 1 ? 1.0 : (1.0 - beta) / one_minus_pow);
  }
  if (normalize_to_mean) {
    double sum = 0.0;
    for (double e : w.eps) sum += e;
    const double scale = static_cast<double>(w.eps.size()) / sum;
    for (double& e : w.eps) e *= scale;
  }
  return w;
}

namespace {
// Shared softmax core: max-subtracted, with the log-sum taken as
// log1p(sum of non-max exponentials) so tiny losses stay accurate.
struct SoftmaxCore {
  double ce = 0.0;  // -log p_y
  Vector p;         // softmax probabilities
};

SoftmaxCore softmax_core(const Vector& logits, int y) {
  const int c = static_cast<int>(logits.size());
  if (y < 0 || y >= c) throw DimensionError("loss: label out of range");

  int max_idx = 0;
  for (int i = 1; i < c; ++i)
    if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(max_idx)]) max_idx = i;
  const double m = logits[static_cast<size_t>(max_idx)];

  SoftmaxCore core;
  core.p.resize(static_cast<size_t>(c));
  double rest = 0.0;
  for (int i = 0; i < c; ++i) {
    core.p[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - m);
    if (i != max_idx) rest += core.p[static_cast<size_t>(i)];
  }
  const double log_sum = std::log1p(rest);
  core.ce = log_sum - (logits[static_cast<size_t>(y)] - m);
  const double inv_sum = 1.0 / (1.0 + rest);
  for (double& v : core.p) v *= inv_sum;
  return core;
}
}  // namespace

LossEval ce_loss(const Vector& logits, int y) {
  SoftmaxCore core = softmax_core(logits, y);
  LossEval out;
  out.loss = core.ce;
  out.dlogits = std::move(core.p);
  out.dlogits[static_cast<size_t>(y)] -= 1.0;
  return out;
}

LossEval focal_loss(const Vector& logits, int y, double gamma) {
  if (gamma < 0.0) throw ConfigError("focal_loss: gamma must be nonnegative");
  if (gamma == 0.0) return ce_loss(logits, y);

  SoftmaxCore core = softmax_core(logits, y);
  const double ce = core.ce;
  const double u = std::exp(-ce);  // p_y
  const double om = 1.0 - u;

  LossEval out;
  out.dlogits.assign(logits.size(), 0.0);
  if (om <= 0.0) return out;  // perfectly confident: loss and gradient vanish

  out.loss = std::pow(om, gamma) * ce;
  // d loss / du times u, with u log u rewritten as -u * ce for stability.
  const double fu = -gamma * std::pow(om, gamma - 1.0) * u * ce - std::pow(om, gamma);
  for (size_t i = 0; i < logits.size(); ++i)
    out.dlogits[i] = fu * ((static_cast<int>(i) == y ? 1.0 : 0.0) - core.p[i]);
  return out;
}

Vector ldam_margins(const std::vector<int>& counts, double c_m) {
  if (c_m <= 0.0) throw ConfigError("ldam_margins: margin scale must be positive");
  Vector m;
  m.reserve(counts.size());
  for (int n : counts) {
    if (n < 1) throw ConfigError("ldam_margins: counts must be >= 1");
    m.push_back(c_m / std::pow(static_cast<double>(n), 0.25));
  }
  return m;
}

double ldam_margin_scale(const std::vector<int>& counts, double max_margin) {
  if (max_margin <= 0.0) throw ConfigError("ldam_margin_scale: max_margin must be positive");
  int n_min = 0;
  for (int n : counts) {
    if (n < 1) throw ConfigError("ldam_margin_scale: counts must be >= 1");
    if (n_min == 0 || n < n_min) n_min = n;
  }
  if (n_min == 0) throw ConfigError("ldam_margin_scale: no classes");
  return max_margin * std::pow(static_cast<double>(n_min), 0.25);
}

Vector ldam_adjust(const Vector& logits, int y, const Vector& margins) {
  if (logits.size() != margins.size())
    throw DimensionError("ldam_adjust: margin count must match class count");
  if (y < 0 || y >= static_cast<int>(logits.size()))
    throw DimensionError("ldam_adjust: label out of range");
  Vector out = logits;
  out[static_cast<size_t>(y)] -= margins[static_cast<size_t>(y)];
  return out;
}

BaseLoss BaseLoss::cross_entropy() { return BaseLoss{}; }

BaseLoss BaseLoss::focal(double gamma) {
  if (gamma < 0.0) throw ConfigError("BaseLoss::focal: gamma must be nonnegative");
  BaseLoss b;
  b.type = BaseLossType::kFocal;
  b.focal_gamma = gamma;
  return b;
}

BaseLoss BaseLoss::ldam(const std::vector<int>& counts, double max_margin) {
  BaseLoss b;
  b.type = BaseLossType::kLdam;
  b.margins = ldam_margins(counts, ldam_margin_scale(counts, max_margin));
  return b;
}

LossEval base_loss(const BaseLoss& base, const Vector& logits, int y) {
  switch (base.type) {
    case BaseLossType::kCrossEntropy:
      return ce_loss(logits, y);
    case BaseLossType::kFocal:
      return focal_loss(logits, y, base.focal_gamma);
    case BaseLossType::kLdam:
      return ce_loss(ldam_adjust(logits, y, base.margins), y);
  }
  throw ConfigError("base_loss: unknown loss type");
}

namespace {
// (diag(p) - p p^T) v for the plain softmax cross-entropy.
Vector ce_hessian_dir(const Vector& p, const Vector& v) {
  const double pv = dot(p, v);
  Vector out(p.size());
  for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (v[i] - pv);
  return out;
}
}  // namespace

Vector base_loss_hessian_dir(const BaseLoss& base, const Vector& logits, int y,
                             const Vector& v) {
  if (logits.size() != v.size())
    throw DimensionError("base_loss_hessian_dir: direction size mismatch");

  if (base.type == BaseLossType::kLdam) {
    SoftmaxCore core = softmax_core(ldam_adjust(logits, y, base.margins), y);
    return ce_hessian_dir(core.p, v);
  }
  if (base.type == BaseLossType::kCrossEntropy || base.focal_gamma == 0.0) {
    SoftmaxCore core = softmax_core(logits, y);
    return ce_hessian_dir(core.p, v);
  }

  // Focal: gradient is f(u) (e_y - p) with u = p_y and
  // f(u) = -g (1-u)^{g-1} u ce - (1-u)^g, so the Hessian splits into a
  // rank-one piece from df/dz and f(u) times the softmax Jacobian.
  const double g = base.focal_gamma;
  SoftmaxCore core = softmax_core(logits, y);
  const double ce = core.ce;
  const double u = std::exp(-ce);
  const double om = 1.0 - u;
  Vector out(logits.size(), 0.0);
  if (om <= 0.0) return out;

  const double fu = -g * std::pow(om, g - 1.0) * u * ce - std::pow(om, g);
  // d(fu)/du * u, again with log u = -ce substituted.
  const double dfu_u = g * (g - 1.0) * std::pow(om, g - 2.0) * u * u * ce +
                       g * std::pow(om, g - 1.0) * u * (2.0 - ce);

  Vector ey_p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    ey_p[i] = (static_cast<int>(i) == y ? 1.0 : 0.0) - core.p[i];
  const double dir = dot(ey_p, v);  // (du/dz . v) / u

  Vector jac_v = ce_hessian_dir(core.p, v);  // (diag(p) - p p^T) v
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = dfu_u * dir * ey_p[i] - fu * jac_v[i];
  return out;
}

namespace {
// Everything about one true class y that the augmented loss reuses across
// samples: logit adjustments, Sigma_y (w_c - w_y) products, and the raw
// class-weight differences.
struct ClassAug {
  Vector delta;  // per class, (lambda/2) dw^T Sigma dw, zero at y
  Matrix s;      // num_classes x d, row c = Sigma_y (w_c - w_y)
  Matrix dw;     // num_classes x d, row c = w_c - w_y
  int negative = 0;
};

ClassAug build_class_aug(int y, const Matrix& w, const CovarianceBank& bank) {
  const int c_total = w.rows;
  const int d = w.cols;
  const Matrix& sig = bank.sigma[static_cast<size_t>(y)];

  ClassAug aug;
  aug.delta.assign(static_cast<size_t>(c_total), 0.0);
  aug.s = Matrix(c_total, d);
  aug.dw = Matrix(c_total, d);
  Vector dw(static_cast<size_t>(d));
  for (int c = 0; c < c_total; ++c) {
    if (c == y) continue;
    const double* wc = w.row_ptr(c);
    const double* wy = w.row_ptr(y);
    for (int j = 0; j < d; ++j) dw[static_cast<size_t>(j)] = wc[j] - wy[j];
    std::copy(dw.begin(), dw.end(), aug.dw.row_ptr(c));
    Vector s = matvec(sig, dw);
    const double q = dot(dw, s);
    std::copy(s.begin(), s.end(), aug.s.row_ptr(c));
    aug.delta[static_cast<size_t>(c)] = 0.5 * bank.lambda * q;
    if (aug.delta[static_cast<size_t>(c)] < 0.0) ++aug.negative;
  }
  return aug;
}

void check_isda_inputs(const Matrix& features, const std::vector<int>& labels,
                       const Matrix& w, const Vector& b, const CovarianceBank& bank,
                       const BaseLoss& base, bool strict_psd) {
  const int c_total = w.rows;
  if (features.rows != static_cast<int>(labels.size()))
    throw DimensionError("augmented loss: feature rows and label count differ");
  if (features.cols != w.cols)
    throw DimensionError("augmented loss: feature dim does not match classifier");
  if (static_cast<int>(b.size()) != c_total)
    throw DimensionError("augmented loss: bias size does not match class count");
  if (bank.num_classes() != c_total)
    throw DimensionError("augmented loss: covariance bank has " +
                         std::to_string(bank.num_classes()) + " classes, classifier " +
                         std::to_string(c_total));
  if (bank.num_classes() > 0 && bank.feature_dim() != w.cols)
    throw DimensionError("augmented loss: covariance dimension does not match features");
  if (base.type == BaseLossType::kLdam &&
      static_cast<int>(base.margins.size()) != c_total)
    throw DimensionError("augmented loss: margin count does not match class count");
  for (int y : labels)
    if (y < 0 || y >= c_total)
      throw DimensionError("augmented loss: label " + std::to_string(y) + " out of range");

  if (strict_psd) {
    std::vector<char> seen(static_cast<size_t>(c_total), 0);
    for (int y : labels) seen[static_cast<size_t>(y)] = 1;
    for (int c = 0; c < c_total; ++c) {
      if (!seen[static_cast<size_t>(c)]) continue;
      SymSpectrum spec = sym_eig(bank.sigma[static_cast<size_t>(c)]);
      for (double ev : spec.eigenvalues)
        if (ev < -1e-10)
          throw DecompositionError("augmented loss: covariance for class " +
                                   std::to_string(c) +
                                   " has eigenvalue " + std::to_string(ev) +
                                   "; the upper-bound reading is void");
    }
  }
}

// Per-class caches built lazily; batches usually repeat labels.
using AugCache = std::vector<std::unique_ptr<ClassAug>>;

const ClassAug& cached_aug(AugCache& cache, int y, const Matrix& w,
                           const CovarianceBank& bank) {
  auto& slot = cache[static_cast<size_t>(y)];
  if (!slot) slot = std::make_unique<ClassAug>(build_class_aug(y, w, bank));
  return *slot;
}
}  // namespace

IsdaEval isda_linf(const Matrix& features, const std::vector<int>& labels, const Matrix& w,
                   const Vector& b, const CovarianceBank& bank, const BaseLoss& base,
                   bool strict_psd) {
  check_isda_inputs(features, labels, w, b, bank, base, strict_psd);
  const int n = features.rows;
  const int c_total = w.rows;

  IsdaEval eval;
  eval.losses.resize(static_cast<size_t>(n));
  eval.delta = Matrix(n, c_total);
  eval.adjusted = Matrix(n, c_total);
  eval.rho = Matrix(n, c_total);

  AugCache cache(static_cast<size_t>(c_total));
  Vector z(static_cast<size_t>(c_total));
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const ClassAug& aug = cached_aug(cache, y, w, bank);

    const double* a = features.row_ptr(i);
    for (int c = 0; c < c_total; ++c) {
      const double* wc = w.row_ptr(c);
      double v = b[static_cast<size_t>(c)];
      for (int j = 0; j < features.cols; ++j) v += wc[j] * a[j];
      z[static_cast<size_t>(c)] = v + aug.delta[static_cast<size_t>(c)];
    }
    std::copy(aug.delta.begin(), aug.delta.end(), eval.delta.row_ptr(i));
    std::copy(z.begin(), z.end(), eval.adjusted.row_ptr(i));

    LossEval le = base_loss(base, z, y);
    eval.losses[static_cast<size_t>(i)] = le.loss;
    std::copy(le.dlogits.begin(), le.dlogits.end(), eval.rho.row_ptr(i));
  }
  for (auto& slot : cache)
    if (slot) eval.negative_delta_count += slot->negative;
  return eval;
}

namespace {
IsdaGradients assemble_gradients(const IsdaEval& eval, const Matrix& features,
                                 const std::vector<int>& labels, const Matrix& w,
                                 const CovarianceBank& bank, const Vector& weights) {
  const int n = features.rows;
  const int c_total = w.rows;
  const int d = w.cols;

  IsdaGradients g;
  g.w = Matrix(c_total, d);
  g.b.assign(static_cast<size_t>(c_total), 0.0);
  g.features = Matrix(n, d);
  g.sigma.assign(static_cast<size_t>(c_total), Matrix(d, d));

  AugCache cache(static_cast<size_t>(c_total));
  Vector rho(static_cast<size_t>(c_total));
  Vector acc(static_cast<size_t>(d));
  Vector dw_row(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const double wt = weights.empty() ? 1.0 : weights[static_cast<size_t>(i)];
    const ClassAug& aug = cached_aug(cache, y, w, bank);

    const double* rho_row = eval.rho.row_ptr(i);
    for (int c = 0; c < c_total; ++c) rho[static_cast<size_t>(c)] = rho_row[c];

    // Logit path: rho a^T into W, rho into b, W^T rho into features.
    const double* a = features.row_ptr(i);
    for (int c = 0; c < c_total; ++c) {
      const double coeff = wt * rho[static_cast<size_t>(c)];
      g.b[static_cast<size_t>(c)] += coeff;
      double* wrow = g.w.row_ptr(c);
      for (int j = 0; j < d; ++j) wrow[j] += coeff * a[j];
    }
    double* frow = g.features.row_ptr(i);
    for (int c = 0; c < c_total; ++c) {
      const double coeff = wt * rho[static_cast<size_t>(c)];
      const double* wc = w.row_ptr(c);
      for (int j = 0; j < d; ++j) frow[j] += coeff * wc[j];
    }

    // Adjustment path: each competing class pushes lambda rho_c
    // Sigma_y (w_c - w_y) into its own row and the negated sum into row y.
    std::fill(acc.begin(), acc.end(), 0.0);
    Matrix& gs = g.sigma[static_cast<size_t>(y)];
    for (int c = 0; c < c_total; ++c) {
      if (c == y) continue;
      const double rc = rho[static_cast<size_t>(c)];
      const double* s = aug.s.row_ptr(c);
      double* wrow = g.w.row_ptr(c);
      const double coeff = wt * bank.lambda * rc;
      for (int j = 0; j < d; ++j) {
        wrow[j] += coeff * s[j];
        acc[static_cast<size_t>(j)] += rc * s[j];
      }
      const double* dwc = aug.dw.row_ptr(c);
      std::copy(dwc, dwc + d, dw_row.begin());
      add_sym_outer(gs, wt * 0.5 * bank.lambda * rc, dw_row, dw_row);
    }
    double* wy_row = g.w.row_ptr(y);
    for (int j = 0; j < d; ++j)
      wy_row[j] -= wt * bank.lambda * acc[static_cast<size_t>(j)];
  }
  return g;
}
}  // namespace

IsdaGradients isda_gradients(const Matrix& features, const std::vector<int>& labels,
                             const Matrix& w, const Vector& b, const CovarianceBank& bank,
                             const BaseLoss& base, const Vector& sample_weights,
                             bool strict_psd) {
  if (!sample_weights.empty() &&
      static_cast<int>(sample_weights.size()) != features.rows)
    throw DimensionError("isda_gradients: one weight per sample required");
  IsdaEval eval = isda_linf(features, labels, w, b, bank, base, strict_psd);
  return assemble_gradients(eval, features, labels, w, bank, sample_weights);
}

BatchLoss weighted_batch_loss(const Matrix& features, const std::vector<int>& labels,
                              const Matrix& w, const Vector& b, const CovarianceBank& bank,
                              const Vector& class_eps, const BaseLoss& base,
                              Reduction reduction, bool strict_psd) {
  if (!class_eps.empty() && static_cast<int>(class_eps.size()) != w.rows)
    throw DimensionError("weighted_batch_loss: one weight per class required");

  IsdaEval eval = isda_linf(features, labels, w, b, bank, base, strict_psd);
  const int n = features.rows;
  const double scale = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;

  Vector weights(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    weights[static_cast<size_t>(i)] =
        scale * (class_eps.empty() ? 1.0 : class_eps[static_cast<size_t>(y)]);
  }

  BatchLoss out;
  out.per_sample = eval.losses;
  out.negative_delta_count = eval.negative_delta_count;
  for (int i = 0; i < n; ++i)
    out.value += weights[static_cast<size_t>(i)] * eval.losses[static_cast<size_t>(i)];
  out.grads = assemble_gradients(eval, features, labels, w, bank, weights);
  return out;
}

BoundCheck monte_carlo_bound_check(const Matrix& features, const std::vector<int>& labels,
                                   const Matrix& w, const Vector& b,
                                   const CovarianceBank& bank, int n_draws, Rng& rng) {
  if (n_draws < 2) throw ConfigError("monte_carlo_bound_check: need at least 2 draws");
  const BaseLoss ce = BaseLoss::cross_entropy();
  IsdaEval eval = isda_linf(features, labels, w, b, bank, ce);

  const int n = features.rows;
  const int c_total = w.rows;
  BoundCheck report;
  report.upper = eval.losses;
  report.mc_mean.resize(static_cast<size_t>(n));
  report.mc_se.resize(static_cast<size_t>(n));
  report.bound_holds = true;
  report.moment_holds = true;
  report.worst_bound_gap = -std::numeric_limits<double>::infinity();

  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const Matrix draws = sample_gaussian(features.row(i), bank.sigma[static_cast<size_t>(y)],
                                         bank.lambda, n_draws, rng);

    // Welford over the per-draw cross-entropies and, per class, over the
    // exponential moments e^{dw^T delta}.
    double ce_mean = 0.0, ce_m2 = 0.0;
    Vector mom_mean(static_cast<size_t>(c_total), 0.0);
    Vector mom_m2(static_cast<size_t>(c_total), 0.0);
    Vector z(static_cast<size_t>(c_total));
    for (int t = 0; t < n_draws; ++t) {
      const double* x = draws.row_ptr(t);
      for (int c = 0; c < c_total; ++c) {
        const double* wc = w.row_ptr(c);
        double v = b[static_cast<size_t>(c)];
        for (int j = 0; j < features.cols; ++j) v += wc[j] * x[j];
        z[static_cast<size_t>(c)] = v;
      }
      const double ce_t = ce_loss(z, y).loss;
      const double d1 = ce_t - ce_mean;
      ce_mean += d1 / (t + 1);
      ce_m2 += d1 * (ce_t - ce_mean);

      for (int c = 0; c < c_total; ++c) {
        if (c == y) continue;
        double dwd = 0.0;  // (w_c - w_y) . (x - a)
        const double* wc = w.row_ptr(c);
        const double* wy = w.row_ptr(y);
        const double* a = features.row_ptr(i);
        for (int j = 0; j < features.cols; ++j) dwd += (wc[j] - wy[j]) * (x[j] - a[j]);
        const double mom = std::exp(dwd);
        const double d2 = mom - mom_mean[static_cast<size_t>(c)];
        mom_mean[static_cast<size_t>(c)] += d2 / (t + 1);
        mom_m2[static_cast<size_t>(c)] += d2 * (mom - mom_mean[static_cast<size_t>(c)]);
      }
    }

    const double se = std::sqrt(ce_m2 / (n_draws - 1) / n_draws);
    report.mc_mean[static_cast<size_t>(i)] = ce_mean;
    report.mc_se[static_cast<size_t>(i)] = se;
    const double gap = ce_mean - eval.losses[static_cast<size_t>(i)];
    report.worst_bound_gap = std::max(report.worst_bound_gap, gap);
    if (gap > 3.0 * se) report.bound_holds = false;

    for (int c = 0; c < c_total; ++c) {
      if (c == y) continue;
      const double target = std::exp(eval.delta(i, c));
      const double mom_se =
          std::sqrt(mom_m2[static_cast<size_t>(c)] / (n_draws - 1) / n_draws);
      const double diff = std::abs(mom_mean[static_cast<size_t>(c)] - target);
      const double units = mom_se > 0.0 ? diff / mom_se
                                        : (diff == 0.0 ? 0.0
                                                       : std::numeric_limits<double>::infinity());
      report.worst_moment_se_units = std::max(report.worst_moment_se_units, units);
      if (diff > 4.0 * mom_se && diff != 0.0) report.moment_holds = false;
    }
  }
  return report;
}

}  // namespace metasaug
