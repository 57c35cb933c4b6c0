#pragma once

// Three-class confusion matrix statistics.

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

namespace simres {

/// Rows are the true class, columns the predicted class.
using Confusion = Eigen::Matrix<std::int64_t, 3, 3, Eigen::RowMajor>;

struct MetricsReport {
  Confusion confusion = Confusion::Zero();
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  double macro_f1 = 0.0;
  double accuracy = 0.0;

  std::int64_t total() const { return confusion.sum(); }
};

/// Per-class precision, recall and F1 with every 0/0 taken as 0; macro F1 is
/// the unweighted mean of the three F1 values.
MetricsReport f1_macro(const Confusion& confusion);

Confusion confusion_from_labels(std::span<const int> truth, std::span<const int> predicted);

/// Lowest index wins ties.
int argmax_row(std::span<const double> row);

/// Aligned text table of the report.
std::string format_report(const MetricsReport& report);

}  // namespace simres
