#pragma once

// Parameter registry and the layer zoo built on the autodiff core.

#include "specfuse/tensor.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace specfuse {

using Rng = std::mt19937_64;

// Named long-lived leaf tensors plus non-trainable buffers (BN running stats).
class ParamStore {
 public:
  Var create(const std::string& name, std::vector<int> shape);
  Array& buffer(const std::string& name, int size, double init);

  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Var>& params() const { return params_; }
  std::map<std::string, Array>& buffers() { return buffers_; }
  const std::map<std::string, Array>& buffers() const { return buffers_; }

  int64_t count() const;  // trainable scalars
  void zero_grads();

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, Array> buffers_;
};

void init_normal(const Var& p, Rng& rng, double stddev);
void init_constant(const Var& p, double v);
void init_he(const Var& p, Rng& rng, int fan_in);

struct Linear {
  Var w, b;
  void init(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;  // [..., in] -> [..., out]
};

struct Conv2dLayer {
  Var w, b;
  void init(ParamStore& ps, const std::string& name, int k, int cin, int cout,
            Rng& rng);
  Var operator()(const Var& x) const;
};

struct Conv3dLayer {
  Var w, b;
  void init(ParamStore& ps, const std::string& name, int k, int cin, int cout,
            Rng& rng);
  Var operator()(const Var& x) const;
};

struct BatchNormLayer {
  Var gamma, beta;
  Array* run_mean = nullptr;
  Array* run_var = nullptr;
  void init(ParamStore& ps, const std::string& name, int c);
  Var operator()(const Var& x, bool training, bool update_running) const;
};

struct LayerNormLayer {
  Var gamma, beta;
  void init(ParamStore& ps, const std::string& name, int c);
  Var operator()(const Var& x) const;
};

// Pre-LN transformer block; optional causal mask.
struct TransformerBlock {
  int width = 0, heads = 0;
  LayerNormLayer ln1, ln2;
  Var w_qkv, b_qkv, w_o, b_o;
  Var w_fc1, b_fc1, w_fc2, b_fc2;
  void init(ParamStore& ps, const std::string& name, int width, int heads,
            Rng& rng);
  Var operator()(const Var& x, bool causal) const;  // x [B,L,W]
};

struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::pair<Array, Array>> state;
  void step(ParamStore& ps);
};

// Sinusoidal timestep features [B, dim]; constants in the graph.
Var timestep_features(const std::vector<int>& t, int dim);

}  // namespace specfuse
