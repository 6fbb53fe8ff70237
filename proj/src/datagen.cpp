#include "metasaug/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace metasaug {

Dataset Dataset::create(Matrix features, std::vector<int> labels, int num_classes) {
  if (features.rows != static_cast<int>(labels.size()))
    throw DimensionError("Dataset: feature rows and label count disagree");
  if (num_classes < 0) throw DimensionError("Dataset: negative class count");
  Dataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  d.class_counts.assign(static_cast<size_t>(num_classes), 0);
  for (int y : d.labels) {
    if (y < 0 || y >= num_classes)
      throw DimensionError("Dataset: label " + std::to_string(y) + " outside [0, " +
                           std::to_string(num_classes) + ")");
    ++d.class_counts[static_cast<size_t>(y)];
  }
  return d;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Matrix f(static_cast<int>(indices.size()), dim());
  std::vector<int> l;
  l.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= size()) throw Error("Dataset::subset: index out of range");
    std::copy(features.row_ptr(src), features.row_ptr(src) + dim(),
              f.row_ptr(static_cast<int>(i)));
    l.push_back(labels[static_cast<size_t>(src)]);
  }
  return Dataset::create(std::move(f), std::move(l), num_classes);
}

std::vector<std::vector<int>> Dataset::indices_by_class() const {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(num_classes));
  for (int i = 0; i < size(); ++i)
    by_class[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(i);
  return by_class;
}

std::vector<int> longtail_counts(const LongTailSpec& spec) {
  if (spec.num_classes < 1) throw ConfigError("longtail: need at least one class");
  if (spec.n_max < 1) throw ConfigError("longtail: n_max must be positive");
  if (spec.mu < 1.0) throw ConfigError("longtail: imbalance factor must be >= 1");
  const int c = spec.num_classes;
  std::vector<int> counts(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    double kept = 0.0;
    if (spec.profile == TailProfile::kExponential) {
      const double expo = (c > 1) ? -static_cast<double>(i) / (c - 1) : 0.0;
      kept = spec.n_max * std::pow(spec.mu, expo);
    } else {
      kept = (i < (c + 1) / 2) ? spec.n_max : spec.n_max / spec.mu;
    }
    counts[static_cast<size_t>(i)] = static_cast<int>(std::lround(kept));
  }
  if (counts.back() < 1)
    throw InsufficientDataError("longtail: rarest class rounds to zero samples (n_max=" +
                                std::to_string(spec.n_max) + ", mu=" + std::to_string(spec.mu) +
                                ")");
  return counts;
}

Dataset make_gaussian_mixture(int num_classes, int dim, int per_class, double separation,
                              Rng& rng) {
  if (num_classes < 2) throw ConfigError("make_gaussian_mixture: need at least 2 classes");
  if (dim < 1) throw ConfigError("make_gaussian_mixture: dim must be positive");
  if (per_class < 1) throw ConfigError("make_gaussian_mixture: per_class must be positive");
  if (!(separation > 0.0)) throw ConfigError("make_gaussian_mixture: separation must be > 0");

  // Class means on the sphere of radius `separation`; redraw on the
  // (vanishingly unlikely) near-collision.
  std::vector<Vector> means;
  means.reserve(static_cast<size_t>(num_classes));
  const double min_gap = 1e-6 * separation;
  while (static_cast<int>(means.size()) < num_classes) {
    Vector u(static_cast<size_t>(dim));
    double norm2 = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm2 += v * v;
    }
    if (norm2 <= 0.0) continue;
    const double inv = separation / std::sqrt(norm2);
    for (double& v : u) v *= inv;
    bool distinct = true;
    for (const Vector& m : means) {
      double d2 = 0.0;
      for (size_t j = 0; j < u.size(); ++j) d2 += (u[j] - m[j]) * (u[j] - m[j]);
      if (std::sqrt(d2) < min_gap) {
        distinct = false;
        break;
      }
    }
    if (distinct) means.push_back(std::move(u));
  }

  const int n = num_classes * per_class;
  Matrix features(n, dim);
  std::vector<int> labels(static_cast<size_t>(n));
  int row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      double* out = features.row_ptr(row);
      for (int j = 0; j < dim; ++j)
        out[j] = means[static_cast<size_t>(c)][static_cast<size_t>(j)] + rng.normal();
      labels[static_cast<size_t>(row)] = c;
    }
  }
  return Dataset::create(std::move(features), std::move(labels), num_classes);
}

Dataset apply_longtail(const Dataset& data, const LongTailSpec& spec, Rng& rng) {
  if (spec.num_classes != data.num_classes)
    throw ConfigError("apply_longtail: spec class count does not match dataset");
  const std::vector<int> target = longtail_counts(spec);
  const auto by_class = data.indices_by_class();
  for (int c = 0; c < data.num_classes; ++c) {
    if (static_cast<int>(by_class[static_cast<size_t>(c)].size()) < spec.n_max)
      throw InsufficientDataError("apply_longtail: class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[static_cast<size_t>(c)].size()) +
                                  " samples, fewer than n_max=" + std::to_string(spec.n_max));
  }

  std::vector<int> keep;
  for (int c = 0; c < data.num_classes; ++c) {
    const auto& pool = by_class[static_cast<size_t>(c)];
    const auto picks =
        rng.sample_without_replacement(static_cast<int>(pool.size()), target[static_cast<size_t>(c)]);
    for (int p : picks) keep.push_back(pool[static_cast<size_t>(p)]);
  }
  std::sort(keep.begin(), keep.end());
  return data.subset(keep);
}

SplitBundle split_meta_validation(const Dataset& data, int k, Rng& rng) {
  if (k < 0) throw ConfigError("split_meta_validation: k must be non-negative");
  const auto by_class = data.indices_by_class();
  for (int c = 0; c < data.num_classes; ++c) {
    if (static_cast<int>(by_class[static_cast<size_t>(c)].size()) <= k)
      throw InsufficientDataError("split_meta_validation: class " + std::to_string(c) +
                                  " has only " +
                                  std::to_string(by_class[static_cast<size_t>(c)].size()) +
                                  " samples, need more than k=" + std::to_string(k));
  }

  std::vector<int> val_indices;
  std::vector<char> in_val(static_cast<size_t>(data.size()), 0);
  for (int c = 0; c < data.num_classes; ++c) {
    const auto& pool = by_class[static_cast<size_t>(c)];
    const auto picks = rng.sample_without_replacement(static_cast<int>(pool.size()), k);
    for (int p : picks) {
      const int idx = pool[static_cast<size_t>(p)];
      val_indices.push_back(idx);
      in_val[static_cast<size_t>(idx)] = 1;
    }
  }
  std::sort(val_indices.begin(), val_indices.end());
  std::vector<int> train_indices;
  train_indices.reserve(static_cast<size_t>(data.size()) - val_indices.size());
  for (int i = 0; i < data.size(); ++i)
    if (!in_val[static_cast<size_t>(i)]) train_indices.push_back(i);

  SplitBundle bundle;
  bundle.train = data.subset(train_indices);
  bundle.meta_val = data.subset(val_indices);
  return bundle;
}

SplitBundle build_longtail_bundle(int num_classes, int dim, int n_max, double mu,
                                  TailProfile profile, int val_per_class, int test_per_class,
                                  double separation, Rng& rng) {
  const int per_class = n_max + val_per_class + test_per_class;
  Dataset pool = make_gaussian_mixture(num_classes, dim, per_class, separation, rng);

  SplitBundle with_test = split_meta_validation(pool, test_per_class, rng);
  SplitBundle out = split_meta_validation(with_test.train, val_per_class, rng);
  out.test = with_test.meta_val;

  LongTailSpec spec;
  spec.num_classes = num_classes;
  spec.n_max = n_max;
  spec.mu = mu;
  spec.profile = profile;
  out.train = apply_longtail(out.train, spec, rng);
  return out;
}

Dataset load_csv(const std::string& path, int expected_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv: " + path + " is empty (no header)");
  // Header f0,...,f{d-1},label fixes the dimension.
  int dim = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.empty() || cells.back() != "label")
      throw ParseError("load_csv: " + path + ": header must end with 'label'");
    dim = static_cast<int>(cells.size()) - 1;
    for (int j = 0; j < dim; ++j) {
      if (cells[static_cast<size_t>(j)] != "f" + std::to_string(j))
        throw ParseError("load_csv: " + path + ": header column " + std::to_string(j) +
                         " should be f" + std::to_string(j));
    }
  }

  std::vector<double> values;
  std::vector<int> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != dim + 1)
      throw ParseError("load_csv: " + path + ": line " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(dim + 1));
    for (int j = 0; j < dim; ++j) {
      try {
        size_t used = 0;
        const double v = std::stod(cells[static_cast<size_t>(j)], &used);
        if (used != cells[static_cast<size_t>(j)].size())
          throw std::invalid_argument("trailing junk");
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
        values.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("load_csv: " + path + ": line " + std::to_string(line_no) +
                         ": cell '" + cells[static_cast<size_t>(j)] + "' is not a finite number");
      }
    }
    int y = 0;
    try {
      size_t used = 0;
      y = std::stoi(cells.back(), &used);
      if (used != cells.back().size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ParseError("load_csv: " + path + ": line " + std::to_string(line_no) + ": label '" +
                       cells.back() + "' is not an integer");
    }
    if (y < 0 || (expected_classes >= 0 && y >= expected_classes))
      throw ParseError("load_csv: " + path + ": line " + std::to_string(line_no) + ": label " +
                       std::to_string(y) + " out of range");
    labels.push_back(y);
  }

  const int n = static_cast<int>(labels.size());
  Matrix features(n, dim);
  features.data = std::move(values);
  int num_classes = expected_classes;
  if (num_classes < 0) {
    num_classes = 0;
    for (int y : labels) num_classes = std::max(num_classes, y + 1);
  }
  return Dataset::create(std::move(features), std::move(labels), num_classes);
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot open " + path + " for writing");
  for (int j = 0; j < data.dim(); ++j) out << "f" << j << ",";
  out << "label\n";
  char buf[40];
  for (int i = 0; i < data.size(); ++i) {
    const double* row = data.features.row_ptr(i);
    for (int j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
      out << buf << ",";
    }
    out << data.labels[static_cast<size_t>(i)] << "\n";
  }
  if (!out) throw IoError("save_csv: write to " + path + " failed");
}

}  // namespace metasaug
