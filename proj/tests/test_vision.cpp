#include "specfuse/vision.hpp"

#include <doctest.h>

#include "helpers.hpp"

using namespace specfuse;
using testutil::randn;

namespace {

VisionConfig toy_cfg(HeadPooling pooling = HeadPooling::kAvg) {
  VisionConfig cfg;
  cfg.in_ch = 6;
  cfg.patch = 5;
  cfg.conv3d_ch = 4;
  cfg.pooling = pooling;
  cfg.shared_dim = 8;
  cfg.num_classes = 3;
  return cfg;
}

}  // namespace

TEST_CASE("spectral extractor: batch shape, pooling widths, zero fixed point") {
  Rng rng(61);
  VisionConfig cfg = toy_cfg();
  ParamStore ps;
  VisionHead head;
  head.init(ps, cfg, rng);

  Var x = constant({2, 5, 5, 6}, randn(2 * 25 * 6, rng));
  Var f = head.extract_features(x);
  CHECK(f->shape == std::vector<int>{2, 6 * 4});

  ParamStore ps2;
  VisionHead flat;
  flat.init(ps2, toy_cfg(HeadPooling::kFlatten), rng);
  CHECK(flat.extract_features(x)->shape == std::vector<int>{2, 6 * 25 * 4});

  // sigma(0) = 0 for relu-style gate: zero input + zero biases -> zero output
  for (const auto& [name, p] : ps.params())
    if (name.rfind("spectral.", 0) == 0) p->val.setZero();
  Var zf = head.extract_features(constant({1, 5, 5, 6}, Array::Zero(150)));
  for (int64_t i = 0; i < zf->size(); ++i) CHECK(zf->val(i) == 0.0);
}

TEST_CASE("classifier posterior: uniform, saturated, shift-invariant") {
  Rng rng(62);
  ParamStore ps;
  VisionHead head;
  head.init(ps, toy_cfg(), rng);

  // zero classifier weights -> zero logits -> uniform posterior
  ps.get("head.cls.w")->val.setZero();
  ps.get("head.cls.b")->val.setZero();
  Var x = constant({2, 5, 5, 6}, randn(2 * 25 * 6, rng));
  Var f = head.extract_features(x);
  Var post = softmax_lastdim(head.class_logits(f));
  for (int64_t i = 0; i < post->size(); ++i)
    CHECK(post->val(i) == doctest::Approx(1.0 / 3).epsilon(1e-9));

  // +20 bias on class 1 -> saturated
  ps.get("head.cls.b")->val(1) = 20.0;
  Var sat = softmax_lastdim(head.class_logits(f));
  CHECK(sat->val(1) >= 0.999);
  CHECK(sat->val(3 + 1) >= 0.999);
}

TEST_CASE("projection: width contract and gradient flow") {
  Rng rng(63);
  ParamStore ps;
  VisionHead head;
  head.init(ps, toy_cfg(), rng);
  Var x = constant({2, 5, 5, 6}, randn(2 * 25 * 6, rng));

  Var p = head.project(head.extract_features(x));
  CHECK(p->shape == std::vector<int>{2, 8});

  auto r = testutil::fd_probe(ps, [&] {
    Var q = head.project(head.extract_features(x));
    return mean_all(mul(q, q));
  }, 20, rng);
  CHECK(r.max_rel_err <= 1e-3);
}

TEST_CASE("spectral extractor gradient on a 5x5x6 toy volume") {
  Rng rng(64);
  ParamStore ps;
  VisionHead head;
  head.init(ps, toy_cfg(), rng);
  Var x = constant({1, 5, 5, 6}, randn(150, rng));
  auto r = testutil::fd_probe(ps, [&] {
    Var f = head.extract_features(x);
    return mean_all(mul(f, f));
  }, 25, rng);
  CHECK(r.max_rel_err <= 1e-3);
}
