#include "specfuse/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace specfuse;

namespace {

// independent brute-force oracle
struct Oracle {
  double oa, aa, kappa;
};

Oracle brute(const std::vector<int64_t>& cm, int C) {
  double total = 0, diag = 0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) total += (double)cm[(size_t)(i * C + j)];
  for (int i = 0; i < C; ++i) diag += (double)cm[(size_t)(i * C + i)];
  double pe = 0, aa = 0;
  int nonempty = 0;
  for (int k = 0; k < C; ++k) {
    double row = 0, col = 0;
    for (int j = 0; j < C; ++j) {
      row += (double)cm[(size_t)(k * C + j)];
      col += (double)cm[(size_t)(j * C + k)];
    }
    pe += row * col / (total * total);
    if (row > 0) {
      aa += (double)cm[(size_t)(k * C + k)] / row;
      ++nonempty;
    }
  }
  double po = diag / total;
  return {po, aa / nonempty, (po - pe) / (1.0 - pe)};
}

}  // namespace

TEST_CASE("worked 2x2 example") {
  MetricsReport r = metrics_from_confusion({50, 10, 5, 35}, 2);
  CHECK(r.oa == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(r.kappa == doctest::Approx(0.34 / 0.49).epsilon(1e-6));
  CHECK(r.ca[0] == doctest::Approx(50.0 / 60).epsilon(1e-12));
  CHECK(r.ca[1] == doctest::Approx(35.0 / 40).epsilon(1e-12));
}

TEST_CASE("agrees with brute-force oracle on 100 random confusion matrices") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> csize(2, 8), cell(0, 40);
  for (int trial = 0; trial < 100; ++trial) {
    int C = csize(rng);
    std::vector<int64_t> cm((size_t)(C * C));
    for (auto& v : cm) v = cell(rng);
    for (int i = 0; i < C; ++i) cm[(size_t)(i * C + i)] += 1;  // nonempty rows
    MetricsReport r = metrics_from_confusion(cm, C);
    Oracle o = brute(cm, C);
    CHECK(std::abs(r.oa - o.oa) <= 1e-12);
    CHECK(std::abs(r.aa - o.aa) <= 1e-12);
    CHECK(std::abs(r.kappa - o.kappa) <= 1e-12);
  }
}

TEST_CASE("perfect and chance-level predictions") {
  MetricsReport perfect = metrics_from_confusion({30, 0, 0, 20}, 2);
  CHECK(perfect.oa == 1.0);
  CHECK(perfect.aa == 1.0);
  CHECK(perfect.kappa == doctest::Approx(1.0).epsilon(1e-12));

  // constant prediction on balanced truth: kappa exactly 0
  MetricsReport chance = metrics_from_confusion({50, 0, 50, 0}, 2);
  CHECK(std::abs(chance.kappa) <= 1e-12);
}

TEST_CASE("empty truth class excluded from AA with a warning") {
  MetricsReport r = metrics_from_confusion({10, 0, 0, 0, 0, 0, 0, 4, 6}, 3);
  CHECK(r.aa == doctest::Approx((1.0 + 0.6) / 2).epsilon(1e-12));
  CHECK(std::isnan(r.ca[1]));
  CHECK(!r.warnings.empty());
}

TEST_CASE("evaluate ignores unlabeled truth") {
  std::vector<int32_t> truth{0, 1, 1, 2, 0, 2};
  std::vector<int32_t> pred{2, 1, 2, 2, 1, 2};
  MetricsReport r = evaluate(pred, truth, 2);
  CHECK(r.total() == 4);
  CHECK(r.at(0, 0) == 1);
  CHECK(r.at(0, 1) == 1);
  CHECK(r.at(1, 1) == 2);
  CHECK(r.oa == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("report layout mirrors the per-class table") {
  MetricsReport r = metrics_from_confusion({50, 10, 5, 35}, 2);
  std::string text = format_report(r, {"alpha", "beta"}, {13, 13}, {60, 40});
  CHECK(text.find("Class(Train/Test)") != std::string::npos);
  CHECK(text.find("alpha (13/60)") != std::string::npos);
  CHECK(text.find("OA") != std::string::npos);
  CHECK(text.find("Kappa") != std::string::npos);
}

TEST_CASE("degenerate inputs rejected") {
  CHECK_THROWS_AS(metrics_from_confusion({0, 0, 0, 0}, 2), DataError);
  CHECK_THROWS_AS(evaluate({1}, {0}, 2), DataError);
}
