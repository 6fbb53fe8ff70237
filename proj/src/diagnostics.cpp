#include "metasaug/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace metasaug {

Matrix ConfusionMatrix::row_normalized() const {
  Matrix out = counts;
  for (int r = 0; r < out.rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < out.cols; ++c) sum += out(r, c);
    if (sum == 0.0) continue;
    for (int c = 0; c < out.cols; ++c) out(r, c) /= sum;
  }
  return out;
}

std::pair<ConfusionMatrix, ErrorReport> evaluate(const ClassifierParams& params,
                                                 const Dataset& test) {
  if (test.size() == 0) throw InsufficientDataError("evaluate: empty test set");
  if (test.num_classes != params.num_classes)
    throw DimensionError("evaluate: class count mismatch between model and test set");

  ConfusionMatrix confusion;
  confusion.counts = Matrix(test.num_classes, test.num_classes);
  confusion.total = test.size();

  ForwardTrace trace = forward(params, test.features);
  for (int i = 0; i < test.size(); ++i) {
    const double* z = trace.logits.row_ptr(i);
    int pred = 0;
    for (int c = 1; c < test.num_classes; ++c)
      if (z[c] > z[pred]) pred = c;  // strict: ties keep the smaller index
    confusion.counts(test.labels[static_cast<size_t>(i)], pred) += 1.0;
  }

  ErrorReport report;
  report.per_class_error.resize(static_cast<size_t>(test.num_classes));
  double correct = 0.0;
  for (int r = 0; r < test.num_classes; ++r) {
    double row_sum = 0.0;
    for (int c = 0; c < test.num_classes; ++c) row_sum += confusion.counts(r, c);
    correct += confusion.counts(r, r);
    report.per_class_error[static_cast<size_t>(r)] =
        row_sum == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                       : 100.0 * (1.0 - confusion.counts(r, r) / row_sum);
  }
  report.overall_error = 100.0 * (1.0 - correct / confusion.total);
  return {confusion, report};
}

void add_group_errors(ErrorReport& report, const ConfusionMatrix& confusion,
                      const std::vector<int>& train_counts) {
  const int c_total = confusion.counts.rows;
  if (static_cast<int>(train_counts.size()) != c_total)
    throw DimensionError("add_group_errors: one training count per class required");

  // Rank classes by training count, largest first, then cut into thirds
  // with the earlier groups absorbing the remainder.
  std::vector<int> order(static_cast<size_t>(c_total));
  for (int c = 0; c < c_total; ++c) order[static_cast<size_t>(c)] = c;
  std::stable_sort(order.begin(), order.end(), [&train_counts](int a, int b) {
    return train_counts[static_cast<size_t>(a)] > train_counts[static_cast<size_t>(b)];
  });

  report.group_of_class.assign(static_cast<size_t>(c_total), 0);
  const int base = c_total / 3;
  const int extra = c_total % 3;
  int cut1 = base + (extra > 0 ? 1 : 0);
  int cut2 = cut1 + base + (extra > 1 ? 1 : 0);
  for (int rank = 0; rank < c_total; ++rank) {
    const int group = rank < cut1 ? 0 : (rank < cut2 ? 1 : 2);
    report.group_of_class[static_cast<size_t>(order[static_cast<size_t>(rank)])] = group;
  }

  report.group_error.assign(3, std::numeric_limits<double>::quiet_NaN());
  for (int g = 0; g < 3; ++g) {
    double samples = 0.0, correct = 0.0;
    for (int r = 0; r < c_total; ++r) {
      if (report.group_of_class[static_cast<size_t>(r)] != g) continue;
      for (int c = 0; c < c_total; ++c) samples += confusion.counts(r, c);
      correct += confusion.counts(r, r);
    }
    if (samples > 0.0)
      report.group_error[static_cast<size_t>(g)] = 100.0 * (1.0 - correct / samples);
  }
}

SpectrumFigure spectrum_figure_data(const CovarianceBank& bank, int c, int k) {
  SpectrumReport base = spectrum_report(bank, c, k);
  SpectrumFigure fig;
  fig.values = base.values;
  fig.all_zero = base.all_zero;

  double log_sum = 0.0, sum = 0.0;
  bool any_zero = fig.values.empty();
  for (double s : fig.values) {
    if (s == 0.0) {
      any_zero = true;
      break;
    }
    log_sum += std::log(s);
    sum += s;
  }
  if (!any_zero) {
    const double n = static_cast<double>(fig.values.size());
    fig.flatness = std::exp(log_sum / n) / (sum / n);
  }
  return fig;
}

void save_confusion_csv(const ConfusionMatrix& confusion, const std::string& path,
                        bool normalized) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const Matrix m = normalized ? confusion.row_normalized() : confusion.counts;
  out << "true_class";
  for (int c = 0; c < m.cols; ++c) out << ",pred_" << c;
  out << "\n";
  char buf[40];
  for (int r = 0; r < m.rows; ++r) {
    out << r;
    for (int c = 0; c < m.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

namespace {
nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}
}  // namespace

nlohmann::json error_report_json(const ErrorReport& report) {
  nlohmann::json j;
  j["overall_error"] = report.overall_error;
  j["per_class_error"] = nlohmann::json::array();
  for (double e : report.per_class_error) j["per_class_error"].push_back(finite_or_null(e));
  if (!report.group_error.empty()) {
    j["groups"] = {{"many", finite_or_null(report.group_error[0])},
                   {"medium", finite_or_null(report.group_error[1])},
                   {"few", finite_or_null(report.group_error[2])},
                   {"group_of_class", report.group_of_class}};
  }
  return j;
}

nlohmann::json spectrum_json(const SpectrumFigure& figure) {
  nlohmann::json j;
  j["values"] = figure.values;
  j["all_zero"] = figure.all_zero;
  j["flatness"] = figure.flatness;
  return j;
}

}  // namespace metasaug
