#include "simres/metrics.hpp"

#include <cstdio>

#include "simres/datapipe.hpp"
#include "simres/errors.hpp"

namespace simres {

MetricsReport f1_macro(const Confusion& confusion) {
  if ((confusion.array() < 0).any()) throw DataError("f1_macro: negative confusion entry");
  if (confusion.sum() == 0) throw DataError("f1_macro: confusion matrix is all zero");
  MetricsReport r;
  r.confusion = confusion;
  for (int c = 0; c < 3; ++c) {
    const std::int64_t tp = confusion(c, c);
    const std::int64_t predicted = confusion.col(c).sum();
    const std::int64_t actual = confusion.row(c).sum();
    const double p = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    const double rc = actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
    r.precision[c] = p;
    r.recall[c] = rc;
    r.f1[c] = (p + rc) == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc);
  }
  r.macro_f1 = (r.f1[0] + r.f1[1] + r.f1[2]) / 3.0;
  r.accuracy = static_cast<double>(confusion.trace()) / static_cast<double>(confusion.sum());
  return r;
}

Confusion confusion_from_labels(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw DataError("confusion: truth and prediction counts differ");
  Confusion c = Confusion::Zero();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 2 || predicted[i] < 0 || predicted[i] > 2) throw DataError("confusion: label out of range");
    ++c(truth[i], predicted[i]);
  }
  return c;
}

int argmax_row(std::span<const double> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

std::string format_report(const MetricsReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %9s\n", "class", "precision", "recall", "f1");
  out += line;
  for (int c = 0; c < 3; ++c) {
    std::snprintf(line, sizeof line, "%-10s %9.4f %9.4f %9.4f\n", std::string(label_token(static_cast<ChangeLabel>(c))).c_str(),
                  r.precision[c], r.recall[c], r.f1[c]);
    out += line;
  }
  std::snprintf(line, sizeof line, "macro_f1 %.4f  accuracy %.4f  samples %lld\n", r.macro_f1, r.accuracy,
                static_cast<long long>(r.total()));
  out += line;
  out += "confusion (rows truth, cols predicted):\n";
  for (int t = 0; t < 3; ++t) {
    std::snprintf(line, sizeof line, "  %6lld %6lld %6lld\n", static_cast<long long>(r.confusion(t, 0)),
                  static_cast<long long>(r.confusion(t, 1)), static_cast<long long>(r.confusion(t, 2)));
    out += line;
  }
  return out;
}

}  // namespace simres
