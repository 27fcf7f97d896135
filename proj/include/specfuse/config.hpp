#pragma once

// Flat key = value run configuration (with optional [section] prefixes).
// Every field carries its default so a zero-flag run works.

#include "specfuse/errors.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace specfuse {

using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_file(const std::string& path);
KvMap parse_kv_text(const std::string& text);

struct RunConfig {
  // data
  int pca_dim = 15;
  int patch = 25;
  int train_per_class = 10;
  // diffusion
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<int> enc_filters{32, 64, 64};
  std::vector<int> dec_filters{64, 32, 32};
  int head_ch = 48;
  int time_dim = 32;
  std::string fusion_strategy = "adaptive";
  // vision head
  int conv3d_ch = 16;
  std::string head_pooling = "avg";
  // text
  int text_width = 512;
  int text_layers = 3;
  int text_heads = 8;
  int shared_dim = 512;
  int refiner_depth = 3;  // e
  int refiner_heads = 8;
  int vocab_size = 512;
  // alignment / losses
  double alpha = 0.2;
  std::array<double, 3> lambdas{0.6, 0.2, 0.2};
  std::string symmetric_ce = "anchor";
  bool learnable_temperature = true;
  double temperature_init = 1.0 / 0.07;
  // optimization
  double learning_rate = 0.001;
  int epochs = 200;
  int samples_per_class = 2;  // per training batch
  uint64_t seed = 42;
  bool deterministic = false;
  int jobs = 1;
  // inference
  int inference_t = 1;
  int eval_batch = 64;

  void validate() const;  // throws ConfigError naming the offending field
  KvMap to_map() const;
  static RunConfig from_map(const KvMap& kv);
  static RunConfig from_file(const std::string& path);
};

}  // namespace specfuse
