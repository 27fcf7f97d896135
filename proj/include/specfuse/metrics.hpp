#pragma once

// Confusion-matrix classification metrics: per-class accuracy, OA, AA and
// the chance-corrected kappa statistic.

#include "specfuse/errors.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace specfuse {

struct MetricsReport {
  int C = 0;
  std::vector<int64_t> confusion;  // C x C, rows = truth
  std::vector<double> ca;          // per-class accuracy (NaN for empty classes)
  double oa = 0, aa = 0, kappa = 0;
  double train_seconds = 0, test_seconds = 0;
  std::vector<std::string> warnings;
  int64_t total() const;
  int64_t at(int truth, int pred) const { return confusion[(size_t)truth * C + pred]; }
};

MetricsReport metrics_from_confusion(const std::vector<int64_t>& confusion, int C);

// pred/truth over a label map; truth 0 is ignored.
MetricsReport evaluate(const std::vector<int32_t>& pred,
                       const std::vector<int32_t>& truth, int C);

// Aligned-column text report in the per-class "Class(Train/Test)" layout.
std::string format_report(const MetricsReport& r,
                          const std::vector<std::string>& class_names,
                          const std::vector<int>& train_counts,
                          const std::vector<int64_t>& test_counts);

}  // namespace specfuse
