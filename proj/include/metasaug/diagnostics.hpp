// Evaluation reports: confusion matrices, per-class and grouped error
// rates, and covariance spectrum summaries.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metasaug/covariance.hpp"
#include "metasaug/datagen.hpp"
#include "metasaug/model.hpp"

namespace metasaug {

struct ConfusionMatrix {
  Matrix counts;  // row = true class, column = predicted class
  int total = 0;

  // Rows divided by their sums; rows of absent classes stay zero.
  Matrix row_normalized() const;
};

struct ErrorReport {
  double overall_error = 0.0;  // percent
  Vector per_class_error;      // percent; NaN for classes absent from the test set
  // Filled by add_group_errors: errors over the many/medium/few class
  // groups and each class's group index.
  Vector group_error;
  std::vector<int> group_of_class;
};

// Argmax prediction with ties broken toward the smaller class index.
std::pair<ConfusionMatrix, ErrorReport> evaluate(const ClassifierParams& params,
                                                 const Dataset& test);

// Buckets classes into count terciles of the training split (class 0 is the
// largest by construction): the top third is "many", the bottom "few".
// Group error is the sample-weighted error over the group's test rows.
void add_group_errors(ErrorReport& report, const ConfusionMatrix& confusion,
                      const std::vector<int>& train_counts);

struct SpectrumFigure {
  Vector values;  // top-k singular values, max-normalized
  bool all_zero = false;
  // Geometric over arithmetic mean of the top-k; 1 for isotropic spectra,
  // 0 when any of them is zero.
  double flatness = 0.0;
};

SpectrumFigure spectrum_figure_data(const CovarianceBank& bank, int c, int k = 5);

void save_confusion_csv(const ConfusionMatrix& confusion, const std::string& path,
                        bool normalized);
nlohmann::json error_report_json(const ErrorReport& report);
nlohmann::json spectrum_json(const SpectrumFigure& figure);

}  // namespace metasaug
