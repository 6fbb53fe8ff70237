// Verification suites. Every suite builds randomized problem instances and
// holds an implementation against an independent oracle: closed forms
// against Monte-Carlo sampling, analytic gradients against central finite
// differences, streaming moments against two-pass recomputation, bitwise
// run equality against a structurally different configuration. Tolerances
// are pinned here, next to the checks that use them.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "metasaug/numerics.hpp"

namespace metasaug {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // worst observed value of the check's metric
  double threshold = 0.0;  // the metric must stay <= this
  std::string detail;
};

bool all_passed(const std::vector<CheckResult>& results);
// "PASS  name  measured=... threshold=...  detail"
std::string format_result(const CheckResult& r);
nlohmann::json results_json(const std::vector<CheckResult>& results);

// Augmented loss with a zero covariance bank, or zero strength, equals the
// base loss exactly (the adjustments vanish identically, so the comparison
// is bitwise and the pinned tolerance of 1e-12 is slack).
std::vector<CheckResult> run_collapse_checks(Rng& rng, int instances = 1000);

// The closed form upper-bounds the sampled mean cross-entropy over Gaussian
// feature augmentations (within 3 standard errors) and the log-normal
// moment identity behind the derivation holds within 4.
std::vector<CheckResult> run_bound_checks(Rng& rng, int instances = 50,
                                          int draws = 100000);

// Analytic gradients of the weighted augmented loss with respect to the
// classifier weights, biases, features and class covariances against
// central finite differences, for all three base losses.
std::vector<CheckResult> run_gradient_checks(Rng& rng, int instances = 51);

// Analytic covariance hypergradient of the validation loss through the
// lookahead step against full-pipeline symmetric finite differences, plus
// exact-zero cases (zero step size, zero strength).
std::vector<CheckResult> run_hypergrad_checks(Rng& rng, int instances = 30,
                                              double fd_h = 1e-5);

// Effective-number class weights against a long-double geometric-series
// oracle; singleton classes weigh exactly 1.
std::vector<CheckResult> run_weight_checks(Rng& rng, int pairs = 100);

// Streaming per-class covariance against a two-pass oracle, and bitwise
// invariance to how the sample stream is chunked into batches.
std::vector<CheckResult> run_streaming_checks(Rng& rng, int streams = 20,
                                              int partitions = 5);

// Imbalance factors {10, 20, 50, 100, 200} on 10- and 100-class sets:
// per-class counts within rounding distance of the exact profile, and the
// subsampled datasets realize those counts exactly.
std::vector<CheckResult> run_longtail_checks(Rng& rng);

// A two-phase run whose meta phase has zero length is bit-identical to a
// plain cross-entropy run with the same seed.
std::vector<CheckResult> run_phase_collapse_checks(std::uint64_t seed = 7);

// Spectrum reports lead with exactly 1 for any nonzero covariance, are
// sorted descending in [0, 1], and flag the all-zero case.
std::vector<CheckResult> run_spectrum_checks(Rng& rng, int instances = 50);

// Every suite above, seeded from one root, in a stable order.
std::vector<CheckResult> run_all_checks(std::uint64_t seed);

// End-to-end comparison on the synthetic long-tail benchmark. Three arms
// share data, initialization and first-phase trajectory per seed and differ
// only in the second phase: plain cross-entropy; fixed estimated-covariance
// augmentation with class-balanced weights; meta-learned covariance with
// class-balanced weights.
struct BenchmarkConfig {
  int num_classes = 10;
  int dim = 10;
  int n_max = 500;
  double mu = 100.0;
  int val_per_class = 10;
  int test_per_class = 500;
  double separation = 3.0;
  int t1 = 600;
  int t2 = 1000;
  int batch_size = 100;
  double lr = 0.1;
  std::string lr_schedule;
  double sigma_lr = 2.0;
  double lambda = 2.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct BenchmarkArm {
  std::string name;
  Vector errors;  // balanced test error per seed, percent
  double mean_error = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkArm> arms;  // ce, fixed augmentation, meta
  bool ordered = false;            // meta < fixed < ce on mean error
  double margin = 0.0;             // ce mean - meta mean, >= 1.0 wanted
  // Rarest class, top-5 spectral flatness (report-only).
  double flatness_meta = 0.0;
  double flatness_estimated = 0.0;
  std::string table;  // per-seed errors, one row per seed
};

BenchmarkResult run_benchmark(const BenchmarkConfig& bc = {});

// Pass/fail view of a benchmark: strict mean-error ordering across the arms
// and the meta arm at least one absolute point below plain cross-entropy.
std::vector<CheckResult> benchmark_check_results(const BenchmarkResult& result);

}  // namespace metasaug
