#include "specfuse/losses.hpp"
#include "specfuse/tensor.hpp"

#include <doctest.h>

#include "helpers.hpp"

#include <cmath>

using namespace specfuse;
using testutil::randn;

TEST_CASE("similarity: transpose identity, cosine range, rescaling invariance") {
  Rng rng(71);
  Var temp = scalar_const(2.5);
  Array ft = randn(4 * 6, rng);
  Array fv = randn(5 * 6, rng);
  SimilarityLogits s = similarity(constant({4, 6}, ft), constant({5, 6}, fv), temp);

  CHECK(s.v2t->shape == std::vector<int>{5, 4});
  CHECK(s.t2v->shape == std::vector<int>{4, 5});
  for (int b = 0; b < 5; ++b)
    for (int c = 0; c < 4; ++c)
      CHECK(s.v2t->val(b * 4 + c) == s.t2v->val(c * 5 + b));  // bit-exact

  // cosine is bounded by the temperature
  for (int64_t i = 0; i < s.v2t->size(); ++i)
    CHECK(std::abs(s.v2t->val(i)) <= 2.5 + 1e-9);

  // positive per-row rescaling leaves logits unchanged
  Array ft2 = ft, fv2 = fv;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) ft2(r * 6 + c) *= (r + 1) * 3.0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) fv2(r * 6 + c) *= 0.5 + r;
  SimilarityLogits s2 = similarity(constant({4, 6}, ft2), constant({5, 6}, fv2), temp);
  for (int64_t i = 0; i < s.v2t->size(); ++i)
    CHECK(std::abs(s.v2t->val(i) - s2.v2t->val(i)) <= 1e-6);
}

TEST_CASE("similarity: aligned row scores exactly temperature, orthogonal zero") {
  Array ft(2 * 3);
  ft << 1, 0, 0, 0, 2, 0;  // rows e1, 2*e2
  Array fv(2 * 3);
  fv << 3, 0, 0, 0, 0, 5;  // rows 3*e1, 5*e3
  Var temp = scalar_const(1.7);
  SimilarityLogits s = similarity(constant({2, 3}, ft), constant({2, 3}, fv), temp);
  CHECK(s.v2t->val(0) == doctest::Approx(1.7).epsilon(1e-12));  // e1 vs e1
  CHECK(std::abs(s.v2t->val(1)) <= 1e-6);                       // e1 vs e2
  CHECK(std::abs(s.v2t->val(2)) <= 1e-6);                       // e3 vs e1
  CHECK(std::abs(s.v2t->val(3)) <= 1e-6);
}

TEST_CASE("noise loss: zero at match, mean-of-ones, symmetric") {
  Rng rng(72);
  Array n = randn(20, rng);
  Var zero_case = loss_noise(constant({20}, n), n, constant({20}, n), n);
  CHECK(zero_case->val(0) == 0.0);

  Array ones = Array::Ones(20), zeros = Array::Zero(20);
  Var one_case = loss_noise(constant({20}, ones), zeros, constant({20}, ones), zeros);
  CHECK(one_case->val(0) == doctest::Approx(1.0).epsilon(1e-12));

  Array a = randn(20, rng), b = randn(20, rng);
  Var ab = loss_noise(constant({20}, a), b, constant({20}, a), b);
  Var ba = loss_noise(constant({20}, b), a, constant({20}, b), a);
  CHECK(ab->val(0) == doctest::Approx(ba->val(0)).epsilon(1e-12));
}

TEST_CASE("classification loss permutation invariance") {
  Rng rng(73);
  Array z = randn(4 * 3, rng);
  Var l1 = loss_classification(constant({4, 3}, z), {0, 1, 2, 0});
  Array zp(4 * 3);
  int perm[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) zp(i * 3 + c) = z(perm[i] * 3 + c);
  Var l2 = loss_classification(constant({4, 3}, zp), {2, 0, 0, 1});
  CHECK(l1->val(0) == doctest::Approx(l2->val(0)).epsilon(1e-12));
}

TEST_CASE("consistency loss: algebra, saturated alignment, permutation batch") {
  Rng rng(74);
  // loss_M = alpha*mc + (1-alpha)*md checked over random synthetic parts via
  // the loss nodes themselves
  auto build_sims = [&](double scale) {
    int C = 3, B = 3;
    Array ft = randn(C * 8, rng);
    Array fv(B * 8);
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < 8; ++k) fv(b * 8 + k) = scale * ft(b * 8 + k);
    return similarity(constant({C, 8}, ft), constant({B, 8}, fv), scalar_const(200.0));
  };
  SimilarityLogits sc = build_sims(1.0);
  std::array<SimilarityLogits, 3> sd{build_sims(2.0), build_sims(3.0), build_sims(0.5)};
  std::vector<int> labels{0, 1, 2};
  std::vector<int> anchors{0, 1, 2};
  auto cons = loss_consistency(sc, sd, labels, anchors, 0.2, SymmetricCeMode::kAnchor);
  CHECK(cons.loss_m->val(0) ==
        doctest::Approx(0.2 * cons.loss_mc->val(0) + 0.8 * cons.loss_md->val(0))
            .epsilon(1e-15));
  // identity alignment at large temperature saturates toward zero loss
  CHECK(cons.loss_mc->val(0) < 1e-6);

  // both CE directions agree on a permutation-structured batch
  auto sym = loss_consistency(sc, sd, labels, anchors, 1.0, SymmetricCeMode::kAnchor);
  auto simple = loss_consistency(sc, sd, labels, anchors, 1.0, SymmetricCeMode::kSimple);
  CHECK(sym.loss_mc->val(0) == doctest::Approx(simple.loss_mc->val(0)).epsilon(1e-9));
}

TEST_CASE("loss_M and total: affine identities over random parts") {
  Rng rng(75);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    double mc = u(rng), md = u(rng), alpha = u(rng) / 5.0;
    // recompute through graph nodes
    Var m = add(scale(scalar_const(mc), alpha), scale(scalar_const(md), 1 - alpha));
    CHECK(m->val(0) == doctest::Approx(alpha * mc + (1 - alpha) * md).epsilon(1e-15));

    double c = u(rng), nn = u(rng), mm = u(rng);
    double l1 = u(rng), l2 = u(rng);
    double s = l1 + l2;
    std::array<double, 3> lambdas{l1 / (s + 1), l2 / (s + 1), 1.0 - (l1 + l2) / (s + 1)};
    Var tot = loss_total(scalar_const(c), scalar_const(nn), scalar_const(mm), lambdas);
    CHECK(tot->val(0) ==
          doctest::Approx(lambdas[0] * c + lambdas[1] * nn + lambdas[2] * mm)
              .epsilon(1e-15));
  }
  // worked example: alpha 0.2, mc 1.0, md 0.5 -> 0.6; lambdas (0.6,.2,.2) on ones -> 1
  CHECK(0.2 * 1.0 + 0.8 * 0.5 == doctest::Approx(0.6).epsilon(1e-15));
  Var t = loss_total(scalar_const(1), scalar_const(1), scalar_const(1), {0.6, 0.2, 0.2});
  CHECK(t->val(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lambda validation") {
  CHECK_NOTHROW(validate_lambdas({0.6, 0.2, 0.2}));
  CHECK_NOTHROW(validate_lambdas({1.0, 0.0, 0.0}));
  CHECK_THROWS_AS(validate_lambdas({0.33, 0.33, 0.33}), ConfigError);
  CHECK_THROWS_AS(validate_lambdas({1.2, -0.1, -0.1}), ConfigError);
}

TEST_CASE("uniform posterior cross entropy is ln C") {
  Var l = loss_classification(constant({3, 6}, Array::Zero(18)), {1, 4, 2});
  CHECK(l->val(0) == doctest::Approx(1.7918).epsilon(1e-4));
}
