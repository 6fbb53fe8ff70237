#include "metasaug/covariance.hpp"

#include <algorithm>
#include <cmath>

#include "metasaug/tensor_io.hpp"

namespace metasaug {

ClassStats ClassStats::create(int num_classes, int feature_dim, bool bessel) {
  if (num_classes < 1 || feature_dim < 1)
    throw ConfigError("ClassStats: num_classes and feature_dim must be positive");
  ClassStats s;
  s.feature_dim = feature_dim;
  s.counts.assign(static_cast<size_t>(num_classes), 0);
  s.means.assign(static_cast<size_t>(num_classes),
                 Vector(static_cast<size_t>(feature_dim), 0.0));
  s.scatter.assign(static_cast<size_t>(num_classes), Matrix(feature_dim, feature_dim));
  s.bessel = bessel;
  return s;
}

void ClassStats::update(const Matrix& features, const std::vector<int>& labels) {
  if (features.rows != static_cast<int>(labels.size()))
    throw DimensionError("ClassStats::update: feature rows and label count differ");
  if (features.cols != feature_dim)
    throw DimensionError("ClassStats::update: feature dim " + std::to_string(features.cols) +
                         ", stats expect " + std::to_string(feature_dim));

  Vector delta(static_cast<size_t>(feature_dim));
  Vector delta2(static_cast<size_t>(feature_dim));
  for (int i = 0; i < features.rows; ++i) {
    const int c = labels[static_cast<size_t>(i)];
    if (c < 0 || c >= num_classes())
      throw DimensionError("ClassStats::update: label " + std::to_string(c) + " out of range");
    const double* x = features.row_ptr(i);
    Vector& mu = means[static_cast<size_t>(c)];
    long long& n = counts[static_cast<size_t>(c)];
    n += 1;
    for (int j = 0; j < feature_dim; ++j) {
      delta[static_cast<size_t>(j)] = x[j] - mu[static_cast<size_t>(j)];
      mu[static_cast<size_t>(j)] += delta[static_cast<size_t>(j)] / static_cast<double>(n);
      delta2[static_cast<size_t>(j)] = x[j] - mu[static_cast<size_t>(j)];
    }
    add_sym_outer(scatter[static_cast<size_t>(c)], 1.0, delta, delta2);
  }
}

Matrix ClassStats::covariance(int c) const {
  if (c < 0 || c >= num_classes())
    throw DimensionError("ClassStats::covariance: class out of range");
  const long long n = counts[static_cast<size_t>(c)];
  const long long denom = bessel ? n - 1 : n;
  if (denom < 1) return Matrix(feature_dim, feature_dim);
  return scale(scatter[static_cast<size_t>(c)], 1.0 / static_cast<double>(denom));
}

bool CovarianceBank::all_symmetric_exact() const {
  for (const Matrix& m : sigma)
    for (int i = 0; i < m.rows; ++i)
      for (int j = i + 1; j < m.cols; ++j)
        if (m(i, j) != m(j, i)) return false;
  return true;
}

namespace {
CovarianceBank bank_from_stats(const ClassStats& stats, double lambda, BankMode mode,
                               PsdPolicy policy) {
  if (lambda < 0.0) throw ConfigError("covariance bank: lambda must be nonnegative");
  CovarianceBank bank;
  bank.mode = mode;
  bank.lambda = lambda;
  bank.psd_policy = policy;
  bank.sigma.reserve(static_cast<size_t>(stats.num_classes()));
  for (int c = 0; c < stats.num_classes(); ++c) {
    bank.sigma.push_back(stats.covariance(c));
    bank.cold.push_back(stats.counts[static_cast<size_t>(c)] == 0 ? 1 : 0);
  }
  return bank;
}
}  // namespace

CovarianceBank snapshot_bank(const ClassStats& stats, double lambda) {
  return bank_from_stats(stats, lambda, BankMode::kEstimated, PsdPolicy::kNone);
}

CovarianceBank learnable_bank_from_stats(const ClassStats& stats, double lambda,
                                         PsdPolicy policy) {
  return bank_from_stats(stats, lambda, BankMode::kLearnable, policy);
}

CovarianceBank learnable_bank_zero(int num_classes, int feature_dim, double lambda,
                                   PsdPolicy policy) {
  if (num_classes < 1 || feature_dim < 1)
    throw ConfigError("learnable_bank_zero: num_classes and feature_dim must be positive");
  if (lambda < 0.0) throw ConfigError("covariance bank: lambda must be nonnegative");
  CovarianceBank bank;
  bank.mode = BankMode::kLearnable;
  bank.lambda = lambda;
  bank.psd_policy = policy;
  bank.sigma.assign(static_cast<size_t>(num_classes), Matrix(feature_dim, feature_dim));
  bank.cold.assign(static_cast<size_t>(num_classes), 1);
  return bank;
}

void apply_sigma_gradient(CovarianceBank& bank, const std::vector<Matrix>& grads,
                          double gamma) {
  if (bank.mode != BankMode::kLearnable)
    throw ModeError("apply_sigma_gradient: bank is not in learnable mode");
  if (static_cast<int>(grads.size()) != bank.num_classes())
    throw DimensionError("apply_sigma_gradient: one gradient per class required");

  for (int c = 0; c < bank.num_classes(); ++c) {
    const Matrix& g = grads[static_cast<size_t>(c)];
    if (g.data.empty()) continue;
    Matrix& s = bank.sigma[static_cast<size_t>(c)];
    if (!g.same_shape(s))
      throw DimensionError("apply_sigma_gradient: gradient shape mismatch for class " +
                           std::to_string(c));
    require_square_symmetric(g, "apply_sigma_gradient");
    axpy(s, -gamma, g);
    s = symmetrize(s);
    if (bank.psd_policy == PsdPolicy::kProjectEachUpdate) s = psd_project(s);
    if (bank.cold[static_cast<size_t>(c)] && max_abs(s) != 0.0)
      bank.cold[static_cast<size_t>(c)] = 0;
  }
}

SpectrumReport spectrum_report(const CovarianceBank& bank, int c, int k) {
  if (c < 0 || c >= bank.num_classes())
    throw DimensionError("spectrum_report: class out of range");
  if (k < 1) throw ConfigError("spectrum_report: k must be positive");

  const Matrix& s = bank.sigma[static_cast<size_t>(c)];
  const int len = std::min(k, s.rows);
  SpectrumReport report;
  if (max_abs(s) == 0.0) {
    report.values.assign(static_cast<size_t>(len), 0.0);
    report.all_zero = true;
    return report;
  }

  SymSpectrum spec = sym_eig(s);
  Vector singular(spec.eigenvalues.size());
  for (size_t i = 0; i < singular.size(); ++i) singular[i] = std::abs(spec.eigenvalues[i]);
  std::sort(singular.begin(), singular.end(), std::greater<double>());
  const double top = singular[0];
  report.values.resize(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) report.values[static_cast<size_t>(i)] = singular[static_cast<size_t>(i)] / top;
  return report;
}

void save_bank(const CovarianceBank& bank, const std::string& prefix) {
  std::vector<NamedTensor> tensors;
  for (int c = 0; c < bank.num_classes(); ++c)
    tensors.push_back({"sigma" + std::to_string(c), bank.sigma[static_cast<size_t>(c)]});

  nlohmann::json meta;
  meta["kind"] = "covariance_bank";
  meta["mode"] = bank.mode == BankMode::kLearnable ? "learnable" : "estimated";
  meta["lambda"] = bank.lambda;
  meta["psd_policy"] =
      bank.psd_policy == PsdPolicy::kProjectEachUpdate ? "project_each_update" : "none";
  meta["num_classes"] = bank.num_classes();
  meta["feature_dim"] = bank.feature_dim();
  meta["cold"] = nlohmann::json::array();
  for (char f : bank.cold) meta["cold"].push_back(f != 0);
  save_tensors(tensors, prefix, meta);
}

CovarianceBank load_bank(const std::string& prefix) {
  auto [tensors, meta] = load_tensors(prefix);
  if (meta.value("kind", "") != "covariance_bank")
    throw ParseError("load_bank: " + prefix + ".json is not a covariance bank checkpoint");

  CovarianceBank bank;
  const std::string mode = meta.at("mode").get<std::string>();
  if (mode == "learnable")
    bank.mode = BankMode::kLearnable;
  else if (mode == "estimated")
    bank.mode = BankMode::kEstimated;
  else
    throw ParseError("load_bank: unknown mode \"" + mode + "\"");
  bank.lambda = meta.at("lambda").get<double>();
  const std::string policy = meta.at("psd_policy").get<std::string>();
  if (policy == "project_each_update")
    bank.psd_policy = PsdPolicy::kProjectEachUpdate;
  else if (policy == "none")
    bank.psd_policy = PsdPolicy::kNone;
  else
    throw ParseError("load_bank: unknown psd policy \"" + policy + "\"");

  const int num_classes = meta.at("num_classes").get<int>();
  const int feature_dim = meta.at("feature_dim").get<int>();
  for (int c = 0; c < num_classes; ++c) {
    const std::string name = "sigma" + std::to_string(c);
    bool found = false;
    for (auto& t : tensors) {
      if (t.name != name) continue;
      if (t.data.rows != feature_dim || t.data.cols != feature_dim)
        throw ParseError("load_bank: " + name + " has wrong shape");
      bank.sigma.push_back(std::move(t.data));
      found = true;
      break;
    }
    if (!found) throw ParseError("load_bank: " + prefix + " is missing tensor " + name);
  }
  for (const auto& f : meta.at("cold")) bank.cold.push_back(f.get<bool>() ? 1 : 0);
  if (static_cast<int>(bank.cold.size()) != num_classes)
    throw ParseError("load_bank: cold flag count disagrees with num_classes");
  return bank;
}

}  // namespace metasaug
