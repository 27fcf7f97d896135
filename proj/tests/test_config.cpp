#include "specfuse/config.hpp"

#include <doctest.h>

using namespace specfuse;

TEST_CASE("kv parser: flat keys, sections, comments") {
  KvMap kv = parse_kv_text(
      "# comment\n"
      "alpha = 0.3\n"
      "\n"
      "[text]\n"
      "width = 64  # trailing comment\n"
      "layers=2\n");
  CHECK(kv.at("alpha") == "0.3");
  CHECK(kv.at("text.width") == "64");
  CHECK(kv.at("text.layers") == "2");
  CHECK_THROWS_AS(parse_kv_text("no_equals_here\n"), ConfigError);
  CHECK_THROWS_AS(parse_kv_text("[unterminated\n"), ConfigError);
  CHECK_THROWS_AS(parse_kv_text("= value\n"), ConfigError);
}

TEST_CASE("defaults match the published constants") {
  RunConfig c;
  CHECK(c.pca_dim == 15);
  CHECK(c.patch == 25);
  CHECK(c.diffusion_steps == 1000);
  CHECK(c.beta_start == 1e-4);
  CHECK(c.beta_end == 0.02);
  CHECK(c.enc_filters == std::vector<int>{32, 64, 64});
  CHECK(c.dec_filters == std::vector<int>{64, 32, 32});
  CHECK(c.head_ch == 48);
  CHECK(c.text_width == 512);
  CHECK(c.text_layers == 3);
  CHECK(c.text_heads == 8);
  CHECK(c.shared_dim == 512);
  CHECK(c.refiner_depth == 3);
  CHECK(c.alpha == 0.2);
  CHECK(c.lambdas == std::array<double, 3>{0.6, 0.2, 0.2});
  CHECK(c.learning_rate == 0.001);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("from_map: overrides, rejection of unknown keys and bad values") {
  RunConfig c = RunConfig::from_map({{"alpha", "0.4"}, {"enc_filters", "4,8,8"}});
  CHECK(c.alpha == 0.4);
  CHECK(c.enc_filters == std::vector<int>{4, 8, 8});

  CHECK_THROWS_AS(RunConfig::from_map({{"not_a_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_map({{"alpha", "abc"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_map({{"epochs", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_map({{"deterministic", "maybe"}}), ConfigError);
}

TEST_CASE("validation names the offending field") {
  RunConfig c;
  c.lambdas = {0.33, 0.33, 0.33};
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }

  c = RunConfig();
  c.patch = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.fusion_strategy = "bogus";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.beta_end = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("to_map round trip is lossless") {
  RunConfig c;
  c.alpha = 0.35;
  c.enc_filters = {4, 8, 8};
  c.fusion_strategy = "weighted_sum";
  c.seed = 123456789;
  c.learnable_temperature = false;
  RunConfig r = RunConfig::from_map(c.to_map());
  CHECK(r.alpha == c.alpha);
  CHECK(r.enc_filters == c.enc_filters);
  CHECK(r.fusion_strategy == c.fusion_strategy);
  CHECK(r.seed == c.seed);
  CHECK(r.learnable_temperature == c.learnable_temperature);
  CHECK(r.to_map() == c.to_map());
}
