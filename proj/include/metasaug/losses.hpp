// Base losses (cross-entropy, focal, label-aware margin), effective-number
// class weights, and the augmented upper-bound loss with its exact
// gradients with respect to logits, last-layer parameters, features and
// the per-class covariances.
#pragma once

#include <vector>

#include "metasaug/covariance.hpp"
#include "metasaug/numerics.hpp"

namespace metasaug {

// eps_c = (1 - beta) / (1 - beta^{n_c}); rare classes get larger weights.
struct ClassWeights {
  double beta = 0.0;
  Vector eps;
};

// Weights are optionally rescaled to mean 1 so beta does not change the
// effective learning rate. Counts must be >= 1 and beta in [0, 1).
ClassWeights effective_number_weights(const std::vector<int>& counts, double beta,
                                      bool normalize_to_mean = true);

struct LossEval {
  double loss = 0.0;
  Vector dlogits;
};

// Stabilized by max-subtraction; the log-sum uses log1p so near-certain
// predictions keep full precision.
LossEval ce_loss(const Vector& logits, int y);

// -(1 - p_y)^gamma * log p_y. gamma == 0 delegates to ce_loss outright so
// the reduction is exact.
LossEval focal_loss(const Vector& logits, int y, double gamma);

// Margins c_m * n_c^{-1/4}; frequent classes get smaller margins.
Vector ldam_margins(const std::vector<int>& counts, double c_m);
// c_m such that the rarest class's margin equals max_margin.
double ldam_margin_scale(const std::vector<int>& counts, double max_margin);
// Subtracts the true-class margin from the true-class logit only;
// cross-entropy is applied downstream.
Vector ldam_adjust(const Vector& logits, int y, const Vector& margins);

enum class BaseLossType { kCrossEntropy, kFocal, kLdam };

struct BaseLoss {
  BaseLossType type = BaseLossType::kCrossEntropy;
  double focal_gamma = 0.0;
  Vector margins;  // per class, margin variant only

  static BaseLoss cross_entropy();
  static BaseLoss focal(double gamma);
  // Margin scale calibrated so the largest margin equals max_margin.
  static BaseLoss ldam(const std::vector<int>& counts, double max_margin = 0.5);
};

LossEval base_loss(const BaseLoss& base, const Vector& logits, int y);

// Hessian of the base loss at `logits` applied to direction v; needed by
// the analytic hypergradient.
Vector base_loss_hessian_dir(const BaseLoss& base, const Vector& logits, int y,
                             const Vector& v);

// Per-class logit adjustments and everything downstream gradient assembly
// needs. adjusted = logits + delta with delta_ic =
// (lambda/2) (w_c - w_y)^T Sigma_y (w_c - w_y) and delta_iy = 0, so the
// true-class logit is never touched and zero covariance collapses the loss
// to the base loss bitwise.
struct IsdaEval {
  Vector losses;    // per sample
  Matrix delta;     // n x C
  Matrix adjusted;  // n x C
  Matrix rho;       // n x C, d loss_i / d adjusted_logit_ic
  int negative_delta_count = 0;  // nonzero only when some Sigma_y is not PSD
};

// strict_psd rejects banks whose used covariances have eigenvalues below
// -1e-10 (the upper-bound reading of the loss is void then); off by
// default, with negative adjustments surfaced in the eval instead.
IsdaEval isda_linf(const Matrix& features, const std::vector<int>& labels, const Matrix& w,
                   const Vector& b, const CovarianceBank& bank, const BaseLoss& base,
                   bool strict_psd = false);

struct IsdaGradients {
  Matrix w;                   // num_classes x d
  Vector b;                   // num_classes
  Matrix features;            // n x d
  std::vector<Matrix> sigma;  // per class, exactly symmetric, zero when absent
};

// Gradients of sum_i weight_i * loss_i. Empty weights mean all ones.
IsdaGradients isda_gradients(const Matrix& features, const std::vector<int>& labels,
                             const Matrix& w, const Vector& b, const CovarianceBank& bank,
                             const BaseLoss& base, const Vector& sample_weights = {},
                             bool strict_psd = false);

enum class Reduction { kSum, kMean };

struct BatchLoss {
  double value = 0.0;
  Vector per_sample;  // unweighted per-sample losses
  IsdaGradients grads;
  int negative_delta_count = 0;
};

// L_B = sum_i eps_{y_i} loss_i (or its mean), with matching gradients.
// class_eps is indexed by label; empty means unweighted.
BatchLoss weighted_batch_loss(const Matrix& features, const std::vector<int>& labels,
                              const Matrix& w, const Vector& b, const CovarianceBank& bank,
                              const Vector& class_eps, const BaseLoss& base,
                              Reduction reduction, bool strict_psd = false);

// Empirical check that the closed form really upper-bounds the expected
// cross-entropy over Gaussian feature augmentations, plus the moment
// identity E[e^{dw^T delta}] = e^{(lambda/2) dw^T Sigma dw} behind it.
struct BoundCheck {
  Vector upper;       // per sample closed-form value
  Vector mc_mean;     // per sample Monte-Carlo mean cross-entropy
  Vector mc_se;       // standard error of that mean
  double worst_bound_gap = 0.0;     // max_i (mc_mean - upper), <= 0 expected
  double worst_moment_se_units = 0.0;
  bool bound_holds = false;   // every sample within mc_mean <= upper + 3 se
  bool moment_holds = false;  // every (sample, class) moment within 4 se
};

BoundCheck monte_carlo_bound_check(const Matrix& features, const std::vector<int>& labels,
                                   const Matrix& w, const Vector& b,
                                   const CovarianceBank& bank, int n_draws, Rng& rng);

}  // namespace metasaug
