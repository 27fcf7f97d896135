#include "specfuse/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace specfuse {

Var ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (params_.count(name))
    throw std::logic_error("parameter already registered: " + name);
  Var p = make_var(std::move(shape), /*needs_grad=*/true);
  p->name = name;
  params_[name] = p;
  return p;
}

Array& ParamStore::buffer(const std::string& name, int size, double init) {
  auto it = buffers_.find(name);
  if (it == buffers_.end())
    it = buffers_.emplace(name, Array::Constant(size, init)).first;
  return it->second;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

int64_t ParamStore::count() const {
  int64_t n = 0;
  for (auto& [_, p] : params_) n += p->size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, p] : params_) p->zero_grad();
}

void init_normal(const Var& p, Rng& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  for (int64_t i = 0; i < p->val.size(); ++i) p->val(i) = d(rng);
}

void init_constant(const Var& p, double v) { p->val.setConstant(v); }

void init_he(const Var& p, Rng& rng, int fan_in) {
  init_normal(p, rng, std::sqrt(2.0 / fan_in));
}

// ---------------- Linear ----------------

void Linear::init(ParamStore& ps, const std::string& name, int in, int out,
                  Rng& rng) {
  w = ps.create(name + ".w", {in, out});
  b = ps.create(name + ".b", {out});
  init_normal(w, rng, 1.0 / std::sqrt((double)in));
  init_constant(b, 0.0);
}

Var Linear::operator()(const Var& x) const {
  int in = w->shape[0];
  if (x->shape.size() == 2) return add_bias(matmul(x, w), b);
  std::vector<int> orig = x->shape;
  int64_t rows = x->size() / in;
  Var flat = reshape(x, {(int)rows, in});
  Var y = add_bias(matmul(flat, w), b);
  std::vector<int> out_shape = orig;
  out_shape.back() = w->shape[1];
  return reshape(y, out_shape);
}

// ---------------- Conv ----------------

void Conv2dLayer::init(ParamStore& ps, const std::string& name, int k, int cin,
                       int cout, Rng& rng) {
  w = ps.create(name + ".w", {k, k, cin, cout});
  b = ps.create(name + ".b", {cout});
  init_he(w, rng, k * k * cin);
  init_constant(b, 0.0);
}

Var Conv2dLayer::operator()(const Var& x) const { return conv2d(x, w, b); }

void Conv3dLayer::init(ParamStore& ps, const std::string& name, int k, int cin,
                       int cout, Rng& rng) {
  w = ps.create(name + ".w", {k, k, k, cin, cout});
  b = ps.create(name + ".b", {cout});
  init_he(w, rng, k * k * k * cin);
  init_constant(b, 0.0);
}

Var Conv3dLayer::operator()(const Var& x) const { return conv3d(x, w, b); }

// ---------------- Norms ----------------

void BatchNormLayer::init(ParamStore& ps, const std::string& name, int c) {
  gamma = ps.create(name + ".gamma", {c});
  beta = ps.create(name + ".beta", {c});
  init_constant(gamma, 1.0);
  init_constant(beta, 0.0);
  run_mean = &ps.buffer(name + ".running_mean", c, 0.0);
  run_var = &ps.buffer(name + ".running_var", c, 1.0);
}

Var BatchNormLayer::operator()(const Var& x, bool training,
                               bool update_running) const {
  return batchnorm(x, gamma, beta, *run_mean, *run_var, training, update_running);
}

void LayerNormLayer::init(ParamStore& ps, const std::string& name, int c) {
  gamma = ps.create(name + ".gamma", {c});
  beta = ps.create(name + ".beta", {c});
  init_constant(gamma, 1.0);
  init_constant(beta, 0.0);
}

Var LayerNormLayer::operator()(const Var& x) const {
  return layernorm(x, gamma, beta);
}

// ---------------- Transformer ----------------

void TransformerBlock::init(ParamStore& ps, const std::string& name, int width_,
                            int heads_, Rng& rng) {
  width = width_;
  heads = heads_;
  if (width % heads != 0)
    throw std::invalid_argument("transformer width must be divisible by heads");
  ln1.init(ps, name + ".ln1", width);
  ln2.init(ps, name + ".ln2", width);
  double s = 1.0 / std::sqrt((double)width);
  w_qkv = ps.create(name + ".attn.w_qkv", {width, 3 * width});
  b_qkv = ps.create(name + ".attn.b_qkv", {3 * width});
  w_o = ps.create(name + ".attn.w_o", {width, width});
  b_o = ps.create(name + ".attn.b_o", {width});
  w_fc1 = ps.create(name + ".mlp.w1", {width, 4 * width});
  b_fc1 = ps.create(name + ".mlp.b1", {4 * width});
  w_fc2 = ps.create(name + ".mlp.w2", {4 * width, width});
  b_fc2 = ps.create(name + ".mlp.b2", {width});
  init_normal(w_qkv, rng, s);
  init_normal(w_o, rng, s);
  init_normal(w_fc1, rng, s);
  init_normal(w_fc2, rng, 1.0 / std::sqrt(4.0 * width));
  init_constant(b_qkv, 0.0);
  init_constant(b_o, 0.0);
  init_constant(b_fc1, 0.0);
  init_constant(b_fc2, 0.0);
}

Var TransformerBlock::operator()(const Var& x, bool causal) const {
  int B = x->shape[0], L = x->shape[1];
  int hd = width / heads;

  // attention
  Var h = ln1(x);
  Var qkv = add_bias(matmul(reshape(h, {B * L, width}), w_qkv), b_qkv);
  qkv = reshape(qkv, {B, L, 3, heads, hd});
  qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3, B, heads, L, hd]
  Var q = reshape(slice(qkv, 0, 0, 1), {B * heads, L, hd});
  Var k = reshape(slice(qkv, 0, 1, 1), {B * heads, L, hd});
  Var v = reshape(slice(qkv, 0, 2, 1), {B * heads, L, hd});
  Var att = scale(bmm(q, k, /*trans_b=*/true), 1.0 / std::sqrt((double)hd));
  if (causal) {
    Array mask = Array::Zero((int64_t)B * heads * L * L);
    for (int64_t bh = 0; bh < (int64_t)B * heads; ++bh)
      for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j)
          mask(bh * L * L + (int64_t)i * L + j) = -1e9;
    att = add_const(att, mask);
  }
  att = softmax_lastdim(att);
  Var ctx = bmm(att, v);  // [B*heads, L, hd]
  ctx = permute(reshape(ctx, {B, heads, L, hd}), {0, 2, 1, 3});
  ctx = reshape(ctx, {B * L, width});
  Var attn_out = reshape(add_bias(matmul(ctx, w_o), b_o), {B, L, width});
  Var y = add(x, attn_out);

  // mlp
  Var m = reshape(ln2(y), {B * L, width});
  m = gelu(add_bias(matmul(m, w_fc1), b_fc1));
  m = add_bias(matmul(m, w_fc2), b_fc2);
  return add(y, reshape(m, {B, L, width}));
}

// ---------------- Adam ----------------

void Adam::step(ParamStore& ps) {
  ++t;
  double bc1 = 1.0 - std::pow(beta1, (double)t);
  double bc2 = 1.0 - std::pow(beta2, (double)t);
  for (auto& [name, p] : ps.params()) {
    if (p->grad.size() != p->val.size()) continue;
    auto it = state.find(name);
    if (it == state.end())
      it = state
               .emplace(name, std::make_pair(Array::Zero(p->val.size()),
                                             Array::Zero(p->val.size())))
               .first;
    Array& m = it->second.first;
    Array& v = it->second.second;
    m = beta1 * m + (1 - beta1) * p->grad;
    v = beta2 * v + (1 - beta2) * p->grad.square();
    p->val -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

// ---------------- timestep features ----------------

Var timestep_features(const std::vector<int>& t, int dim) {
  int B = (int)t.size();
  int half = dim / 2;
  Array out((int64_t)B * dim);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      out((int64_t)b * dim + i) = std::sin(t[b] * freq);
      out((int64_t)b * dim + half + i) = std::cos(t[b] * freq);
    }
  if (dim % 2 == 1)
    for (int b = 0; b < B; ++b) out((int64_t)b * dim + dim - 1) = 0.0;
  return constant({B, dim}, std::move(out));
}

}  // namespace specfuse
