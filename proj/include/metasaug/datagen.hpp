// Synthetic dataset construction: balanced Gaussian mixtures, long-tailed
// subsampling by imbalance factor, the balanced meta-validation split, and
// CSV ingestion/emission.
#pragma once

#include <string>
#include <vector>

#include "metasaug/numerics.hpp"

namespace metasaug {

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // n entries in [0, num_classes)
  int num_classes = 0;
  std::vector<int> class_counts;  // indexed by class id

  // Validates labels against num_classes and fills class_counts.
  static Dataset create(Matrix features, std::vector<int> labels, int num_classes);

  int size() const { return features.rows; }
  int dim() const { return features.cols; }
  Dataset subset(const std::vector<int>& indices) const;
  std::vector<std::vector<int>> indices_by_class() const;
};

enum class TailProfile { kExponential, kStep };

struct LongTailSpec {
  int num_classes = 0;
  int n_max = 0;
  double mu = 1.0;  // largest / smallest class count, >= 1
  TailProfile profile = TailProfile::kExponential;
};

// Per-class kept counts for a spec. Exponential: n_i = round(n_max *
// mu^(-i/(C-1))) for class rank i; step: the first half of the classes keep
// n_max and the rest round(n_max / mu). Throws when any count rounds to 0.
std::vector<int> longtail_counts(const LongTailSpec& spec);

struct SplitBundle {
  Dataset train;
  Dataset meta_val;  // balanced, k per class
  Dataset test;      // balanced; empty unless filled by the pipeline
};

// Balanced mixture: class means at separation * (pairwise-distinct random
// unit directions), isotropic unit within-class covariance.
Dataset make_gaussian_mixture(int num_classes, int dim, int per_class, double separation,
                              Rng& rng);

// Keeps a long-tailed subsample of a balanced dataset; retained samples are
// drawn uniformly at random per class. Class id equals count rank, so class
// 0 stays largest.
Dataset apply_longtail(const Dataset& data, const LongTailSpec& spec, Rng& rng);

// Removes k random samples per class into a balanced meta-validation set.
// The bundle's test member is left empty. Every class needs more than k
// samples.
SplitBundle split_meta_validation(const Dataset& data, int k, Rng& rng);

// Full pipeline used by the CLI and the end-to-end benchmark: generate a
// balanced mixture with n_max + val_per_class + test_per_class samples per
// class, carve the balanced test and meta-validation splits first, then
// impose the long tail on the remainder. Splitting before subsampling keeps
// the validation split feasible even when the rarest class retains only a
// handful of training samples.
SplitBundle build_longtail_bundle(int num_classes, int dim, int n_max, double mu,
                                  TailProfile profile, int val_per_class, int test_per_class,
                                  double separation, Rng& rng);

// CSV with header f0,...,f{d-1},label; one sample per row. Parse failures
// name the offending line. Labels must be non-negative; pass
// expected_classes >= 0 to also enforce an upper bound, otherwise the class
// count is inferred as max label + 1.
Dataset load_csv(const std::string& path, int expected_classes = -1);
void save_csv(const Dataset& data, const std::string& path);

}  // namespace metasaug
