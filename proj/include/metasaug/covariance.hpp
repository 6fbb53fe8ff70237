// Per-class feature statistics and the covariance bank: streaming
// estimation over deep features, snapshots for augmentation, and a
// learnable variant that absorbs meta-gradient steps.
#pragma once

#include <string>
#include <vector>

#include "metasaug/numerics.hpp"

namespace metasaug {

// Running count/mean/scatter per class, updated one sample at a time so the
// result is identical for any batch partition of the same stream. The
// scatter accumulator stays exactly symmetric.
struct ClassStats {
  int feature_dim = 0;
  std::vector<long long> counts;
  std::vector<Vector> means;
  std::vector<Matrix> scatter;  // sum of centered outer products
  bool bessel = false;          // divide by N-1 instead of N

  static ClassStats create(int num_classes, int feature_dim, bool bessel = false);

  int num_classes() const { return static_cast<int>(counts.size()); }

  // Streams every row through the running moments in order.
  void update(const Matrix& features, const std::vector<int>& labels);

  // Covariance of class c over everything seen so far; zero matrix when the
  // class has too few samples for the chosen denominator.
  Matrix covariance(int c) const;
};

enum class BankMode { kEstimated, kLearnable };
enum class PsdPolicy { kNone, kProjectEachUpdate };

// The per-class covariances consumed by the augmented losses. Estimated
// banks are frozen snapshots of ClassStats; learnable banks are live
// parameters stepped by apply_sigma_gradient.
struct CovarianceBank {
  BankMode mode = BankMode::kEstimated;
  double lambda = 0.0;  // augmentation strength multiplying every Sigma_c
  PsdPolicy psd_policy = PsdPolicy::kNone;
  std::vector<Matrix> sigma;
  std::vector<char> cold;  // class never contributed data or gradient signal

  int num_classes() const { return static_cast<int>(sigma.size()); }
  int feature_dim() const { return sigma.empty() ? 0 : sigma[0].rows; }
  bool all_symmetric_exact() const;
};

// Detached snapshot of the current statistics; later update() calls on the
// stats leave it untouched. Classes with no samples get Sigma = 0 and the
// cold flag.
CovarianceBank snapshot_bank(const ClassStats& stats, double lambda);

// Live parameter bank seeded from the statistics (the usual phase-switch
// initialization) or from zero.
CovarianceBank learnable_bank_from_stats(const ClassStats& stats, double lambda,
                                         PsdPolicy policy);
CovarianceBank learnable_bank_zero(int num_classes, int feature_dim, double lambda,
                                   PsdPolicy policy);

// Sigma_c <- Sigma_c - gamma * grads[c], re-symmetrized, then projected to
// the PSD cone when the bank's policy asks for it. Empty gradient entries
// skip their class. Throws ModeError on estimated banks and DimensionError
// when a gradient is not symmetric.
void apply_sigma_gradient(CovarianceBank& bank, const std::vector<Matrix>& grads,
                          double gamma);

struct SpectrumReport {
  Vector values;  // top-k singular values, descending, divided by the largest
  bool all_zero = false;
};

// Singular values of Sigma_c (moduli of its eigenvalues), max-normalized so
// the leading entry is exactly 1 whenever Sigma_c is nonzero.
SpectrumReport spectrum_report(const CovarianceBank& bank, int c, int k);

// Same binary + JSON sidecar convention as model checkpoints.
void save_bank(const CovarianceBank& bank, const std::string& prefix);
CovarianceBank load_bank(const std::string& prefix);

}  // namespace metasaug
