#include "specfuse/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace specfuse {

int64_t MetricsReport::total() const {
  int64_t n = 0;
  for (int64_t v : confusion) n += v;
  return n;
}

MetricsReport metrics_from_confusion(const std::vector<int64_t>& confusion,
                                     int C) {
  if ((int64_t)confusion.size() != (int64_t)C * C)
    throw DataError("metrics: confusion matrix must be C x C");
  MetricsReport r;
  r.C = C;
  r.confusion = confusion;
  int64_t total = r.total();
  if (total == 0) throw DataError("metrics: empty test set");

  int64_t diag = 0;
  double pe = 0.0;
  r.ca.resize((size_t)C);
  int present = 0;
  double ca_sum = 0.0;
  for (int k = 0; k < C; ++k) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < C; ++j) {
      row += r.at(k, j);
      col += r.at(j, k);
    }
    diag += r.at(k, k);
    pe += (double)row * (double)col;
    if (row > 0) {
      r.ca[(size_t)k] = (double)r.at(k, k) / (double)row;
      ca_sum += r.ca[(size_t)k];
      ++present;
    } else {
      r.ca[(size_t)k] = std::numeric_limits<double>::quiet_NaN();
      r.warnings.push_back("class " + std::to_string(k + 1) +
                           " has no truth pixels; excluded from AA");
    }
  }
  pe /= (double)total * (double)total;
  double po = (double)diag / (double)total;
  r.oa = po;
  r.aa = present > 0 ? ca_sum / present : 0.0;
  r.kappa = pe >= 1.0 ? 1.0 : (po - pe) / (1.0 - pe);
  return r;
}

MetricsReport evaluate(const std::vector<int32_t>& pred,
                       const std::vector<int32_t>& truth, int C) {
  if (pred.size() != truth.size())
    throw DataError("evaluate: prediction/truth size mismatch");
  std::vector<int64_t> cm((size_t)C * C, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    int32_t t = truth[i];
    if (t == 0) continue;
    int32_t p = pred[i];
    if (t < 1 || t > C || p < 1 || p > C)
      throw DataError("evaluate: label outside 1..C");
    ++cm[(size_t)(t - 1) * C + (p - 1)];
  }
  return metrics_from_confusion(cm, C);
}

std::string format_report(const MetricsReport& r,
                          const std::vector<std::string>& class_names,
                          const std::vector<int>& train_counts,
                          const std::vector<int64_t>& test_counts) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  size_t width = 18;
  for (const auto& n : class_names) width = std::max(width, n.size() + 2);
  os << "No.  " << std::setw((int)width) << std::left << "Class(Train/Test)"
     << "  CA(%)\n";
  for (int k = 0; k < r.C; ++k) {
    std::string name = k < (int)class_names.size() ? class_names[(size_t)k]
                                                   : "class_" + std::to_string(k + 1);
    std::string counts =
        " (" +
        (k < (int)train_counts.size() ? std::to_string(train_counts[(size_t)k]) : "?") +
        "/" +
        (k < (int)test_counts.size() ? std::to_string(test_counts[(size_t)k]) : "?") +
        ")";
    os << std::setw(3) << std::right << (k + 1) << "  " << std::setw((int)width)
       << std::left << (name + counts) << "  ";
    if (std::isnan(r.ca[(size_t)k]))
      os << "n/a";
    else
      os << 100.0 * r.ca[(size_t)k];
    os << "\n";
  }
  os << "OA     " << 100.0 * r.oa << "\n";
  os << "AA     " << 100.0 * r.aa << "\n";
  os << "Kappa  " << 100.0 * r.kappa << "\n";
  os << "Training Time (s)  " << r.train_seconds << "\n";
  os << "Test Time (s)      " << r.test_seconds << "\n";
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace specfuse
