#pragma once

// Reverse-mode autodiff over dense double tensors. Graphs are built per
// forward pass; parameters are long-lived leaf nodes. All math runs in
// float64 so finite-difference audits are meaningful.

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace specfuse {

using Array = Eigen::ArrayXd;

struct TensorNode;
using Var = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  Array val;
  Array grad;  // allocated lazily by backward()
  bool needs_grad = false;
  std::string name;
  std::vector<Var> parents;
  std::function<void(TensorNode&)> backprop;  // scatter self.grad into parents

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != val.size()) grad = Array::Zero(val.size());
  }
  void zero_grad() {
    if (grad.size() == val.size()) grad.setZero();
  }
};

int64_t shape_size(const std::vector<int>& shape);

Var make_var(std::vector<int> shape, bool needs_grad = false);
Var constant(std::vector<int> shape, Array data);
Var scalar_const(double v);

// Runs reverse accumulation from a scalar root (grad seeded with 1).
void backward(const Var& root);

// ---- elementwise / algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, const Array& c);          // c has no grad
Var mul_scalar_var(const Var& a, const Var& s);       // s is shape {1}
Var relu(const Var& a);
Var gelu(const Var& a);
Var exp_op(const Var& a);

// ---- shape ops ----
Var reshape(const Var& a, std::vector<int> shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& a, int axis, int start, int len);

// ---- matmul ----
Var matmul(const Var& a, const Var& b);                       // [m,k]x[k,n]
Var bmm(const Var& a, const Var& b, bool trans_b = false);    // [N,m,k]x[N,k,n]

// ---- broadcasts ----
Var add_bias(const Var& a, const Var& b);        // b over last dim
Var add_batch0(const Var& a, const Var& b);      // a [B,...], b [...]: broadcast over axis 0
Var add_channel_bc(const Var& x, const Var& y);  // x [B,H,W,C], y [B,C]

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mean_hw(const Var& a);       // [B,H,W,C] -> [B,C]
Var mean_axes23(const Var& a);   // [B,D,H,W,C] -> [B,D,C]

// ---- normalization / softmax ----
Var softmax_lastdim(const Var& a);
Var l2_normalize_rows(const Var& a);  // [R,W]; throws on zero-norm rows
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels);

// ---- gather ----
Var embedding_rows(const Var& table, const std::vector<int>& ids);  // -> [n, W]
Var gather_rows(const Var& a, const std::vector<int>& idx);         // [B,L,W] -> [B,W]

// ---- image ops (NHWC) ----
Var conv2d(const Var& x, const Var& w, const Var& b);  // w [kh,kw,Cin,Cout], same pad, stride 1
Var maxpool2d(const Var& x);                           // 2x2 stride 2, ceil
Var resize_bilinear(const Var& x, int h2, int w2);     // align-corners
// BatchNorm over N,H,W per channel. In training mode batch statistics are
// used (and running stats optionally updated in-place); in inference mode
// running stats are constants.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Array& run_mean,
              Array& run_var, bool training, bool update_running,
              double momentum = 0.1, double eps = 1e-5);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- volumetric (NDHWC) ----
Var conv3d(const Var& x, const Var& w, const Var& b);  // w [kd,kh,kw,Cin,Cout], same pad

}  // namespace specfuse
