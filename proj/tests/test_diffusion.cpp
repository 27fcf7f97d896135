#include "specfuse/diffusion.hpp"

#include <doctest.h>

#include "helpers.hpp"

#include <cmath>

using namespace specfuse;
using testutil::randn;

TEST_CASE("schedule: endpoints, monotonicity, tail") {
  DiffusionSchedule one = make_schedule(1, 0.1, 0.1);
  CHECK(one.beta[0] == doctest::Approx(0.1));
  CHECK(one.alpha_bar[0] == doctest::Approx(0.9));

  DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  CHECK(s.beta[0] == doctest::Approx(1e-4));
  CHECK(s.beta[999] == doctest::Approx(0.02));
  CHECK(s.alpha_bar[999] < 0.01);
  for (int i = 1; i < 1000; ++i) CHECK(s.alpha_bar[(size_t)i] < s.alpha_bar[(size_t)i - 1]);

  // independent product oracle
  double prod = 1.0;
  for (int i = 0; i < 1000; ++i) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
    CHECK(s.alpha_bar[(size_t)i] == doctest::Approx(prod).epsilon(1e-12));
  }

  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ConfigError);
}

TEST_CASE("forward diffusion: linear identities") {
  Rng rng(31);
  Array x0 = randn(50, rng);
  Array noise = randn(50, rng);
  DiffusionSchedule s = make_schedule(100, 1e-4, 0.02);

  Array x1 = forward_diffuse(x0, 40, Array(Array::Zero(50)), s);
  double ab = s.alpha_bar[39];
  for (int i = 0; i < 50; ++i)
    CHECK(x1(i) == doctest::Approx(std::sqrt(ab) * x0(i)).epsilon(1e-12));

  Array x2 = forward_diffuse(Array(Array::Zero(50)), 40, noise, s);
  for (int i = 0; i < 50; ++i)
    CHECK(x2(i) == doctest::Approx(std::sqrt(1 - ab) * noise(i)).epsilon(1e-12));

  CHECK_THROWS_AS(forward_diffuse(x0, 0, noise, s), ConfigError);
  CHECK_THROWS_AS(forward_diffuse(x0, 101, noise, s), ConfigError);
}

namespace {

DenoiserConfig toy_denoiser(FusionStrategy f = FusionStrategy::kAdaptive) {
  DenoiserConfig cfg;
  cfg.in_ch_hsi = 4;
  cfg.enc_filters = {6, 8, 8};
  cfg.dec_filters = {8, 6, 6};
  cfg.head_ch = 5;
  cfg.time_dim = 8;
  cfg.fusion = f;
  return cfg;
}

}  // namespace

TEST_CASE("encoder: 25 -> 13 -> 7 ceiling downsampling, bottleneck channels") {
  Rng rng(32);
  ParamStore ps;
  DenoiserConfig cfg = toy_denoiser();
  BranchEncoder enc;
  enc.init(ps, "enc", cfg.in_ch_hsi, cfg, rng);

  Var x = constant({1, 25, 25, 4}, randn(25 * 25 * 4, rng));
  Var temb = timestep_features({3}, cfg.time_dim);
  EncoderTrace tr = enc.encode(x, temb, false, false);
  REQUIRE(tr.skips.size() == 2);
  CHECK(tr.skips[0]->shape == std::vector<int>{1, 25, 25, 6});
  CHECK(tr.skips[1]->shape == std::vector<int>{1, 13, 13, 8});
  CHECK(tr.bottleneck->shape == std::vector<int>{1, 7, 7, 8});
}

TEST_CASE("residual block: zero conv weights pass positive input through") {
  Rng rng(33);
  ParamStore ps;
  ResBlock2d blk;
  blk.init(ps, "blk", 3, 3, rng);
  for (const auto& [name, p] : ps.params())
    if (name.find("conv") != std::string::npos) p->val.setZero();
  Var x = constant({1, 4, 4, 3}, Array(randn(48, rng).abs() + 0.1));
  Var y = blk(x, true, false);
  for (int64_t i = 0; i < x->size(); ++i)
    CHECK(y->val(i) == doctest::Approx(x->val(i)).epsilon(1e-12));
}

TEST_CASE("inference mode is deterministic across calls") {
  Rng rng(34);
  ParamStore ps;
  FusionDenoiser net;
  net.init(ps, toy_denoiser(), rng);
  Var xh = constant({2, 9, 9, 4}, randn(2 * 81 * 4, rng));
  Var xl = constant({2, 9, 9, 1}, randn(2 * 81, rng));
  auto a = net.forward(xh, xl, {1, 1}, false, false);
  auto b = net.forward(xh, xl, {1, 1}, false, false);
  for (int64_t i = 0; i < a.dec.fused->size(); ++i)
    CHECK(a.dec.fused->val(i) == b.dec.fused->val(i));
}

TEST_CASE("adaptive fusion: masks partition unity, forced logits saturate") {
  Rng rng(35);
  ParamStore ps;
  DenoiserConfig cfg = toy_denoiser();
  AdaptiveFusion fusion;
  fusion.init(ps, cfg, rng);

  Var xh = constant({2, 5, 5, 8}, randn(2 * 25 * 8, rng));
  Var xl = constant({2, 5, 5, 8}, randn(2 * 25 * 8, rng));
  FusionOutputs out = fusion.fuse(xh, xl);
  REQUIRE(out.mask_hsi);
  REQUIRE(out.mask_lid);
  for (int64_t i = 0; i < out.mask_hsi->size(); ++i)
    CHECK(std::abs(out.mask_hsi->val(i) + out.mask_lid->val(i) - 1.0) < 1e-6);
  CHECK(out.fused->shape == std::vector<int>{2, 5, 5, 16});

  // force mask logits to (+10, -10): hsi mask saturates
  fusion.mask_conv().w->val.setZero();
  fusion.mask_conv().b->val(0) = 10.0;
  fusion.mask_conv().b->val(1) = -10.0;
  FusionOutputs forced = fusion.fuse(xh, xl);
  double expect = std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0));
  for (int64_t i = 0; i < forced.mask_hsi->size(); ++i) {
    CHECK(forced.mask_hsi->val(i) >= 0.9999);
    CHECK(forced.mask_hsi->val(i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("default-width fusion emits 128 channels") {
  Rng rng(36);
  ParamStore ps;
  DenoiserConfig cfg;  // paper widths: enc (32,64,64)
  AdaptiveFusion fusion;
  fusion.init(ps, cfg, rng);
  Var xh = constant({1, 3, 3, 64}, randn(9 * 64, rng));
  Var xl = constant({1, 3, 3, 64}, randn(9 * 64, rng));
  CHECK(fusion.fuse(xh, xl).fused->shape == std::vector<int>{1, 3, 3, 128});
}

TEST_CASE("decoder restores patch resolution; heads match noise shapes") {
  Rng rng(37);
  ParamStore ps;
  DenoiserConfig cfg = toy_denoiser();
  FusionDenoiser net;
  net.init(ps, cfg, rng);
  Var xh = constant({2, 25, 25, 4}, randn(2 * 625 * 4, rng));
  Var xl = constant({2, 25, 25, 1}, randn(2 * 625, rng));
  auto out = net.forward(xh, xl, {5, 5}, true, false);
  CHECK(out.dec.x_hsi_dec->shape == std::vector<int>{2, 25, 25, 6});
  CHECK(out.dec.fused->shape == std::vector<int>{2, 25, 25, 10});  // 2*head_ch
  CHECK(out.dec.n_hsi_pred->shape == std::vector<int>{2, 25, 25, 4});
  CHECK(out.dec.n_lid_pred->shape == std::vector<int>{2, 25, 25, 1});
}

TEST_CASE("every fusion strategy produces the documented fused width") {
  Rng rng(38);
  for (FusionStrategy f : {FusionStrategy::kNone, FusionStrategy::kSum,
                           FusionStrategy::kConcat, FusionStrategy::kWeightedSum,
                           FusionStrategy::kWeightedConcat, FusionStrategy::kAdaptive}) {
    ParamStore ps;
    FusionDenoiser net;
    net.init(ps, toy_denoiser(f), rng);
    Var xh = constant({1, 9, 9, 4}, randn(81 * 4, rng));
    Var xl = constant({1, 9, 9, 1}, randn(81, rng));
    auto out = net.forward(xh, xl, {2}, true, false);
    CHECK(out.fusion.fused->shape == std::vector<int>{1, 3, 3, 16});
    CHECK(out.dec.fused->shape == std::vector<int>{1, 9, 9, 10});
  }
}
