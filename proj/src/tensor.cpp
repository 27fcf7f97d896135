#include "specfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace specfuse {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> st(shape.size(), 1);
  for (int i = (int)shape.size() - 2; i >= 0; --i)
    st[i] = st[i + 1] * shape[i + 1];
  return st;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("tensor: " + msg);
}

Var unary(const Var& a, std::vector<int> shape) {
  Var out = std::make_shared<TensorNode>();
  out->shape = std::move(shape);
  out->needs_grad = a->needs_grad;
  if (out->needs_grad) out->parents = {a};
  return out;
}

Var binary(const Var& a, const Var& b, std::vector<int> shape) {
  Var out = std::make_shared<TensorNode>();
  out->shape = std::move(shape);
  out->needs_grad = a->needs_grad || b->needs_grad;
  if (out->needs_grad) out->parents = {a, b};
  return out;
}

}  // namespace

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Var make_var(std::vector<int> shape, bool needs_grad) {
  Var v = std::make_shared<TensorNode>();
  v->val = Array::Zero(shape_size(shape));
  v->shape = std::move(shape);
  v->needs_grad = needs_grad;
  return v;
}

Var constant(std::vector<int> shape, Array data) {
  check(shape_size(shape) == data.size(), "constant: shape/data mismatch");
  Var v = std::make_shared<TensorNode>();
  v->shape = std::move(shape);
  v->val = std::move(data);
  return v;
}

Var scalar_const(double x) { return constant({1}, Array::Constant(1, x)); }

void backward(const Var& root) {
  check(root->size() == 1, "backward: root must be scalar");
  // iterative topo sort
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, i] = stack.back();
    if (i < node->parents.size()) {
      TensorNode* p = node->parents[i++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) {
    n->ensure_grad();
    n->grad.setZero();
  }
  root->grad(0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) {
      for (auto& p : n->parents) p->ensure_grad();
      n->backprop(*n);
    }
  }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
  check(a->shape == b->shape, "add: shape mismatch");
  Var out = binary(a, b, a->shape);
  out->val = a->val + b->val;
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) {
      if (o.parents[0]->needs_grad) o.parents[0]->grad += o.grad;
      if (o.parents[1]->needs_grad) o.parents[1]->grad += o.grad;
    };
  return out;
}

Var sub(const Var& a, const Var& b) {
  check(a->shape == b->shape, "sub: shape mismatch");
  Var out = binary(a, b, a->shape);
  out->val = a->val - b->val;
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) {
      if (o.parents[0]->needs_grad) o.parents[0]->grad += o.grad;
      if (o.parents[1]->needs_grad) o.parents[1]->grad -= o.grad;
    };
  return out;
}

Var mul(const Var& a, const Var& b) {
  check(a->shape == b->shape, "mul: shape mismatch");
  Var out = binary(a, b, a->shape);
  out->val = a->val * b->val;
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) {
      if (o.parents[0]->needs_grad)
        o.parents[0]->grad += o.grad * o.parents[1]->val;
      if (o.parents[1]->needs_grad)
        o.parents[1]->grad += o.grad * o.parents[0]->val;
    };
  return out;
}

Var scale(const Var& a, double s) {
  Var out = unary(a, a->shape);
  out->val = a->val * s;
  if (out->needs_grad)
    out->backprop = [s](TensorNode& o) { o.parents[0]->grad += o.grad * s; };
  return out;
}

Var add_const(const Var& a, const Array& c) {
  check(a->val.size() == c.size(), "add_const: size mismatch");
  Var out = unary(a, a->shape);
  out->val = a->val + c;
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) { o.parents[0]->grad += o.grad; };
  return out;
}

Var mul_scalar_var(const Var& a, const Var& s) {
  check(s->size() == 1, "mul_scalar_var: scalar expected");
  Var out = binary(a, s, a->shape);
  out->val = a->val * s->val(0);
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) {
      if (o.parents[0]->needs_grad)
        o.parents[0]->grad += o.grad * o.parents[1]->val(0);
      if (o.parents[1]->needs_grad)
        o.parents[1]->grad(0) += (o.grad * o.parents[0]->val).sum();
    };
  return out;
}

Var relu(const Var& a) {
  Var out = unary(a, a->shape);
  out->val = a->val.max(0.0);
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) {
      o.parents[0]->grad += o.grad * (o.parents[0]->val > 0.0).cast<double>();
    };
  return out;
}

Var gelu(const Var& a) {
  // tanh approximation
  static constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  Var out = unary(a, a->shape);
  Array x = a->val;
  Array inner = k * (x + 0.044715 * x.cube());
  Array t = inner.tanh();
  out->val = 0.5 * x * (1.0 + t);
  if (out->needs_grad)
    out->backprop = [t, x](TensorNode& o) {
      Array dinner = k * (1.0 + 3.0 * 0.044715 * x.square());
      Array d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * dinner;
      o.parents[0]->grad += o.grad * d;
    };
  return out;
}

Var exp_op(const Var& a) {
  Var out = unary(a, a->shape);
  out->val = a->val.exp();
  if (out->needs_grad) {
    Array y = out->val;
    out->backprop = [y](TensorNode& o) { o.parents[0]->grad += o.grad * y; };
  }
  return out;
}

// ---------------- shape ----------------

Var reshape(const Var& a, std::vector<int> shape) {
  check(shape_size(shape) == a->size(), "reshape: size mismatch");
  Var out = unary(a, std::move(shape));
  out->val = a->val;
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) { o.parents[0]->grad += o.grad; };
  return out;
}

namespace {
void permute_copy(const std::vector<int>& in_shape, const std::vector<int>& perm,
                  const Array& src, Array& dst, bool add_into) {
  int nd = (int)in_shape.size();
  std::vector<int> out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  auto in_st = strides_of(in_shape);
  auto out_st = strides_of(out_shape);
  int64_t n = shape_size(in_shape);
  std::vector<int> idx(nd, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat;
    int64_t src_off = 0;
    for (int i = 0; i < nd; ++i) {
      int c = (int)(rem / out_st[i]);
      rem %= out_st[i];
      src_off += (int64_t)c * in_st[perm[i]];
    }
    if (add_into)
      dst(src_off) += src(flat);
    else
      dst(flat) = src(src_off);
  }
}
}  // namespace

Var permute(const Var& a, const std::vector<int>& perm) {
  check(perm.size() == a->shape.size(), "permute: rank mismatch");
  std::vector<int> out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = a->shape[perm[i]];
  Var out = unary(a, out_shape);
  out->val.resize(a->size());
  permute_copy(a->shape, perm, a->val, out->val, false);
  if (out->needs_grad) {
    std::vector<int> in_shape = a->shape;
    std::vector<int> p = perm;
    out->backprop = [in_shape, p](TensorNode& o) {
      permute_copy(in_shape, p, o.grad, o.parents[0]->grad, true);
    };
  }
  return out;
}

Var concat(const std::vector<Var>& xs, int axis) {
  check(!xs.empty(), "concat: empty");
  int nd = (int)xs[0]->shape.size();
  if (axis < 0) axis += nd;
  std::vector<int> out_shape = xs[0]->shape;
  int total = 0;
  for (auto& x : xs) {
    check((int)x->shape.size() == nd, "concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis) check(x->shape[i] == out_shape[i], "concat: dim mismatch");
    total += x->shape[axis];
  }
  out_shape[axis] = total;

  Var out = std::make_shared<TensorNode>();
  out->shape = out_shape;
  out->val.resize(shape_size(out_shape));
  for (auto& x : xs) out->needs_grad = out->needs_grad || x->needs_grad;
  if (out->needs_grad) out->parents = xs;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= out_shape[i];

  int64_t off = 0;
  for (auto& x : xs) {
    int64_t span = (int64_t)x->shape[axis] * inner;
    for (int64_t o = 0; o < outer; ++o)
      out->val.segment(o * total * inner + off, span) = x->val.segment(o * span, span);
    off += span;
  }
  if (out->needs_grad) {
    std::vector<int> axdims;
    for (auto& x : xs) axdims.push_back(x->shape[axis]);
    out->backprop = [outer, inner, total, axdims](TensorNode& o) {
      int64_t off = 0;
      for (size_t k = 0; k < o.parents.size(); ++k) {
        int64_t span = (int64_t)axdims[k] * inner;
        if (o.parents[k]->needs_grad)
          for (int64_t ou = 0; ou < outer; ++ou)
            o.parents[k]->grad.segment(ou * span, span) +=
                o.grad.segment(ou * total * inner + off, span);
        off += span;
      }
    };
  }
  return out;
}

Var slice(const Var& a, int axis, int start, int len) {
  int nd = (int)a->shape.size();
  if (axis < 0) axis += nd;
  check(start >= 0 && start + len <= a->shape[axis], "slice: out of range");
  std::vector<int> out_shape = a->shape;
  out_shape[axis] = len;
  Var out = unary(a, out_shape);
  out->val.resize(shape_size(out_shape));

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a->shape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= a->shape[i];
  int64_t in_ax = a->shape[axis];
  for (int64_t o = 0; o < outer; ++o)
    out->val.segment(o * len * inner, (int64_t)len * inner) =
        a->val.segment(o * in_ax * inner + start * inner, (int64_t)len * inner);
  if (out->needs_grad)
    out->backprop = [outer, inner, in_ax, start, len](TensorNode& o) {
      for (int64_t ou = 0; ou < outer; ++ou)
        o.parents[0]->grad.segment(ou * in_ax * inner + start * inner,
                                   (int64_t)len * inner) +=
            o.grad.segment(ou * len * inner, (int64_t)len * inner);
    };
  return out;
}

// ---------------- matmul ----------------

Var matmul(const Var& a, const Var& b) {
  check(a->shape.size() == 2 && b->shape.size() == 2, "matmul: rank 2 expected");
  int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  check(b->shape[0] == k, "matmul: inner dim mismatch");
  Var out = binary(a, b, {m, n});
  out->val.resize((int64_t)m * n);
  MapMat(out->val.data(), m, n) =
      CMapMat(a->val.data(), m, k) * CMapMat(b->val.data(), k, n);
  if (out->needs_grad)
    out->backprop = [m, k, n](TensorNode& o) {
      CMapMat g(o.grad.data(), m, n);
      if (o.parents[0]->needs_grad)
        MapMat(o.parents[0]->grad.data(), m, k) +=
            g * CMapMat(o.parents[1]->val.data(), k, n).transpose();
      if (o.parents[1]->needs_grad)
        MapMat(o.parents[1]->grad.data(), k, n) +=
            CMapMat(o.parents[0]->val.data(), m, k).transpose() * g;
    };
  return out;
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
  check(a->shape.size() == 3 && b->shape.size() == 3, "bmm: rank 3 expected");
  int N = a->shape[0], m = a->shape[1], k = a->shape[2];
  check(b->shape[0] == N, "bmm: batch mismatch");
  int n = trans_b ? b->shape[1] : b->shape[2];
  int bk = trans_b ? b->shape[2] : b->shape[1];
  check(bk == k, "bmm: inner dim mismatch");
  Var out = binary(a, b, {N, m, n});
  out->val.resize((int64_t)N * m * n);
  for (int i = 0; i < N; ++i) {
    CMapMat A(a->val.data() + (int64_t)i * m * k, m, k);
    MapMat O(out->val.data() + (int64_t)i * m * n, m, n);
    if (trans_b)
      O = A * CMapMat(b->val.data() + (int64_t)i * n * k, n, k).transpose();
    else
      O = A * CMapMat(b->val.data() + (int64_t)i * k * n, k, n);
  }
  if (out->needs_grad)
    out->backprop = [N, m, k, n, trans_b](TensorNode& o) {
      for (int i = 0; i < N; ++i) {
        CMapMat G(o.grad.data() + (int64_t)i * m * n, m, n);
        CMapMat A(o.parents[0]->val.data() + (int64_t)i * m * k, m, k);
        if (trans_b) {
          CMapMat B(o.parents[1]->val.data() + (int64_t)i * n * k, n, k);
          if (o.parents[0]->needs_grad)
            MapMat(o.parents[0]->grad.data() + (int64_t)i * m * k, m, k) += G * B;
          if (o.parents[1]->needs_grad)
            MapMat(o.parents[1]->grad.data() + (int64_t)i * n * k, n, k) +=
                G.transpose() * A;
        } else {
          CMapMat B(o.parents[1]->val.data() + (int64_t)i * k * n, k, n);
          if (o.parents[0]->needs_grad)
            MapMat(o.parents[0]->grad.data() + (int64_t)i * m * k, m, k) +=
                G * B.transpose();
          if (o.parents[1]->needs_grad)
            MapMat(o.parents[1]->grad.data() + (int64_t)i * k * n, k, n) +=
                A.transpose() * G;
        }
      }
    };
  return out;
}

// ---------------- broadcasts ----------------

Var add_bias(const Var& a, const Var& b) {
  int nd = (int)a->shape.size();
  int c = a->shape[nd - 1];
  check(b->shape.size() == 1 && b->shape[0] == c, "add_bias: bias dim mismatch");
  Var out = binary(a, b, a->shape);
  int64_t rows = a->size() / c;
  out->val.resize(a->size());
  for (int64_t r = 0; r < rows; ++r)
    out->val.segment(r * c, c) = a->val.segment(r * c, c) + b->val;
  if (out->needs_grad)
    out->backprop = [rows, c](TensorNode& o) {
      if (o.parents[0]->needs_grad) o.parents[0]->grad += o.grad;
      if (o.parents[1]->needs_grad)
        for (int64_t r = 0; r < rows; ++r)
          o.parents[1]->grad += o.grad.segment(r * c, c);
    };
  return out;
}

Var add_batch0(const Var& a, const Var& b) {
  check(a->shape.size() == b->shape.size() + 1, "add_batch0: rank mismatch");
  for (size_t i = 0; i < b->shape.size(); ++i)
    check(a->shape[i + 1] == b->shape[i], "add_batch0: dim mismatch");
  int B = a->shape[0];
  int64_t span = b->size();
  Var out = binary(a, b, a->shape);
  out->val.resize(a->size());
  for (int i = 0; i < B; ++i)
    out->val.segment(i * span, span) = a->val.segment(i * span, span) + b->val;
  if (out->needs_grad)
    out->backprop = [B, span](TensorNode& o) {
      if (o.parents[0]->needs_grad) o.parents[0]->grad += o.grad;
      if (o.parents[1]->needs_grad)
        for (int i = 0; i < B; ++i)
          o.parents[1]->grad += o.grad.segment(i * span, span);
    };
  return out;
}

Var add_channel_bc(const Var& x, const Var& y) {
  check(x->shape.size() == 4 && y->shape.size() == 2, "add_channel_bc: rank");
  int B = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
  check(y->shape[0] == B && y->shape[1] == C, "add_channel_bc: dims");
  Var out = binary(x, y, x->shape);
  out->val.resize(x->size());
  int64_t hw = (int64_t)H * W;
  for (int b = 0; b < B; ++b)
    for (int64_t p = 0; p < hw; ++p)
      out->val.segment((b * hw + p) * C, C) =
          x->val.segment((b * hw + p) * C, C) + y->val.segment((int64_t)b * C, C);
  if (out->needs_grad)
    out->backprop = [B, hw, C](TensorNode& o) {
      if (o.parents[0]->needs_grad) o.parents[0]->grad += o.grad;
      if (o.parents[1]->needs_grad)
        for (int b = 0; b < B; ++b)
          for (int64_t p = 0; p < hw; ++p)
            o.parents[1]->grad.segment((int64_t)b * C, C) +=
                o.grad.segment((b * hw + p) * C, C);
    };
  return out;
}

// ---------------- reductions ----------------

Var sum_all(const Var& a) {
  Var out = unary(a, {1});
  out->val = Array::Constant(1, a->val.sum());
  if (out->needs_grad)
    out->backprop = [](TensorNode& o) { o.parents[0]->grad += o.grad(0); };
  return out;
}

Var mean_all(const Var& a) {
  double inv = 1.0 / (double)a->size();
  Var out = unary(a, {1});
  out->val = Array::Constant(1, a->val.sum() * inv);
  if (out->needs_grad)
    out->backprop = [inv](TensorNode& o) { o.parents[0]->grad += o.grad(0) * inv; };
  return out;
}

Var mean_hw(const Var& a) {
  check(a->shape.size() == 4, "mean_hw: rank 4 expected");
  int B = a->shape[0], H = a->shape[1], W = a->shape[2], C = a->shape[3];
  Var out = unary(a, {B, C});
  out->val = Array::Zero((int64_t)B * C);
  int64_t hw = (int64_t)H * W;
  double inv = 1.0 / (double)hw;
  for (int b = 0; b < B; ++b)
    for (int64_t p = 0; p < hw; ++p)
      out->val.segment((int64_t)b * C, C) += a->val.segment((b * hw + p) * C, C);
  out->val *= inv;
  if (out->needs_grad)
    out->backprop = [B, hw, C, inv](TensorNode& o) {
      for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < hw; ++p)
          o.parents[0]->grad.segment((b * hw + p) * C, C) +=
              o.grad.segment((int64_t)b * C, C) * inv;
    };
  return out;
}

Var mean_axes23(const Var& a) {
  check(a->shape.size() == 5, "mean_axes23: rank 5 expected");
  int B = a->shape[0], D = a->shape[1], H = a->shape[2], W = a->shape[3],
      C = a->shape[4];
  Var out = unary(a, {B, D, C});
  out->val = Array::Zero((int64_t)B * D * C);
  int64_t hw = (int64_t)H * W;
  double inv = 1.0 / (double)hw;
  for (int64_t bd = 0; bd < (int64_t)B * D; ++bd)
    for (int64_t p = 0; p < hw; ++p)
      out->val.segment(bd * C, C) += a->val.segment((bd * hw + p) * C, C);
  out->val *= inv;
  if (out->needs_grad)
    out->backprop = [B, D, hw, C, inv](TensorNode& o) {
      for (int64_t bd = 0; bd < (int64_t)B * D; ++bd)
        for (int64_t p = 0; p < hw; ++p)
          o.parents[0]->grad.segment((bd * hw + p) * C, C) +=
              o.grad.segment(bd * C, C) * inv;
    };
  return out;
}

// ---------------- softmax / norms ----------------

Var softmax_lastdim(const Var& a) {
  int nd = (int)a->shape.size();
  int c = a->shape[nd - 1];
  int64_t rows = a->size() / c;
  Var out = unary(a, a->shape);
  out->val.resize(a->size());
  for (int64_t r = 0; r < rows; ++r) {
    Array row = a->val.segment(r * c, c);
    double mx = row.maxCoeff();
    Array e = (row - mx).exp();
    out->val.segment(r * c, c) = e / e.sum();
  }
  if (out->needs_grad)
    out->backprop = [rows, c](TensorNode& o) {
      for (int64_t r = 0; r < rows; ++r) {
        Array y = o.val.segment(r * c, c);
        Array g = o.grad.segment(r * c, c);
        double dot = (y * g).sum();
        o.parents[0]->grad.segment(r * c, c) += y * (g - dot);
      }
    };
  return out;
}

Var l2_normalize_rows(const Var& a) {
  check(a->shape.size() == 2, "l2_normalize_rows: rank 2 expected");
  int R = a->shape[0], W = a->shape[1];
  Var out = unary(a, a->shape);
  out->val.resize(a->size());
  std::vector<double> norms(R);
  for (int r = 0; r < R; ++r) {
    Array row = a->val.segment((int64_t)r * W, W);
    double n = std::sqrt(row.square().sum());
    if (!(n > 0.0))
      throw std::runtime_error("l2_normalize_rows: zero-norm row (dead embedding)");
    norms[r] = n;
    out->val.segment((int64_t)r * W, W) = row / n;
  }
  if (out->needs_grad)
    out->backprop = [R, W, norms](TensorNode& o) {
      for (int r = 0; r < R; ++r) {
        Array x = o.parents[0]->val.segment((int64_t)r * W, W);
        Array g = o.grad.segment((int64_t)r * W, W);
        double n = norms[r];
        double dot = (x * g).sum();
        o.parents[0]->grad.segment((int64_t)r * W, W) +=
            g / n - x * (dot / (n * n * n));
      }
    };
  return out;
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  check(logits->shape.size() == 2, "cross_entropy: rank 2 expected");
  int B = logits->shape[0], C = logits->shape[1];
  check((int)labels.size() == B, "cross_entropy: label count mismatch");
  for (int y : labels) check(y >= 0 && y < C, "cross_entropy: label out of range");
  Var out = unary(logits, {1});
  double total = 0.0;
  Array probs((int64_t)B * C);
  for (int b = 0; b < B; ++b) {
    Array row = logits->val.segment((int64_t)b * C, C);
    double mx = row.maxCoeff();
    Array e = (row - mx).exp();
    double Z = e.sum();
    probs.segment((int64_t)b * C, C) = e / Z;
    total += std::log(Z) + mx - row(labels[b]);
  }
  out->val = Array::Constant(1, total / B);
  if (out->needs_grad)
    out->backprop = [B, C, probs, labels](TensorNode& o) {
      double g = o.grad(0) / B;
      for (int b = 0; b < B; ++b) {
        o.parents[0]->grad.segment((int64_t)b * C, C) +=
            g * probs.segment((int64_t)b * C, C);
        o.parents[0]->grad((int64_t)b * C + labels[b]) -= g;
      }
    };
  return out;
}

// ---------------- gather ----------------

Var embedding_rows(const Var& table, const std::vector<int>& ids) {
  check(table->shape.size() == 2, "embedding_rows: rank 2 expected");
  int V = table->shape[0], W = table->shape[1];
  int n = (int)ids.size();
  for (int id : ids) check(id >= 0 && id < V, "embedding_rows: id out of range");
  Var out = unary(table, {n, W});
  out->val.resize((int64_t)n * W);
  for (int i = 0; i < n; ++i)
    out->val.segment((int64_t)i * W, W) =
        table->val.segment((int64_t)ids[i] * W, W);
  if (out->needs_grad)
    out->backprop = [ids, W](TensorNode& o) {
      for (size_t i = 0; i < ids.size(); ++i)
        o.parents[0]->grad.segment((int64_t)ids[i] * W, W) +=
            o.grad.segment((int64_t)i * W, W);
    };
  return out;
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  check(a->shape.size() == 3, "gather_rows: rank 3 expected");
  int B = a->shape[0], L = a->shape[1], W = a->shape[2];
  check((int)idx.size() == B, "gather_rows: index count mismatch");
  Var out = unary(a, {B, W});
  out->val.resize((int64_t)B * W);
  for (int b = 0; b < B; ++b) {
    check(idx[b] >= 0 && idx[b] < L, "gather_rows: index out of range");
    out->val.segment((int64_t)b * W, W) =
        a->val.segment(((int64_t)b * L + idx[b]) * W, W);
  }
  if (out->needs_grad)
    out->backprop = [idx, L, W](TensorNode& o) {
      for (size_t b = 0; b < idx.size(); ++b)
        o.parents[0]->grad.segment(((int64_t)b * L + idx[b]) * W, W) +=
            o.grad.segment((int64_t)b * W, W);
    };
  return out;
}

// ---------------- conv2d ----------------

namespace {
// im2col for same-padding stride-1 conv; col is [H*W, kh*kw*Cin]
void im2col(const double* x, int H, int W, int C, int kh, int kw, RowMat& col) {
  int ph = kh / 2, pw = kw / 2;
  col.setZero();
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int64_t row = (int64_t)r * W + c;
      int k = 0;
      for (int dr = -ph; dr <= ph; ++dr)
        for (int dc = -pw; dc <= pw; ++dc, k += C) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          const double* src = x + ((int64_t)rr * W + cc) * C;
          for (int ch = 0; ch < C; ++ch) col(row, k + ch) = src[ch];
        }
    }
}

void col2im_add(const RowMat& col, int H, int W, int C, int kh, int kw, double* gx) {
  int ph = kh / 2, pw = kw / 2;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int64_t row = (int64_t)r * W + c;
      int k = 0;
      for (int dr = -ph; dr <= ph; ++dr)
        for (int dc = -pw; dc <= pw; ++dc, k += C) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          double* dst = gx + ((int64_t)rr * W + cc) * C;
          for (int ch = 0; ch < C; ++ch) dst[ch] += col(row, k + ch);
        }
    }
}
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
  check(x->shape.size() == 4 && w->shape.size() == 4, "conv2d: rank");
  int B = x->shape[0], H = x->shape[1], W_ = x->shape[2], Cin = x->shape[3];
  int kh = w->shape[0], kw = w->shape[1], Cout = w->shape[3];
  check(w->shape[2] == Cin, "conv2d: channel mismatch");
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d: odd kernel expected");
  check(b->shape.size() == 1 && b->shape[0] == Cout, "conv2d: bias dims");

  Var out = std::make_shared<TensorNode>();
  out->shape = {B, H, W_, Cout};
  out->val.resize((int64_t)B * H * W_ * Cout);
  out->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
  if (out->needs_grad) out->parents = {x, w, b};

  int64_t hw = (int64_t)H * W_;
  int K = kh * kw * Cin;
  RowMat col(hw, K);
  CMapMat Wm(w->val.data(), K, Cout);
  for (int i = 0; i < B; ++i) {
    im2col(x->val.data() + i * hw * Cin, H, W_, Cin, kh, kw, col);
    MapMat O(out->val.data() + i * hw * Cout, hw, Cout);
    O = col * Wm;
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->val.data(), Cout);
  }
  if (out->needs_grad)
    out->backprop = [B, H, W_, Cin, kh, kw, Cout, hw, K](TensorNode& o) {
      RowMat col(hw, K);
      CMapMat Wm(o.parents[1]->val.data(), K, Cout);
      bool need_x = o.parents[0]->needs_grad;
      bool need_w = o.parents[1]->needs_grad;
      bool need_b = o.parents[2]->needs_grad;
      for (int i = 0; i < B; ++i) {
        CMapMat G(o.grad.data() + i * hw * Cout, hw, Cout);
        if (need_w || need_x)
          im2col(o.parents[0]->val.data() + i * hw * Cin, H, W_, Cin, kh, kw, col);
        if (need_w)
          MapMat(o.parents[1]->grad.data(), K, Cout) += col.transpose() * G;
        if (need_x) {
          RowMat dcol = G * Wm.transpose();
          col2im_add(dcol, H, W_, Cin, kh, kw,
                     o.parents[0]->grad.data() + i * hw * Cin);
        }
        if (need_b)
          Eigen::Map<Eigen::RowVectorXd>(o.parents[2]->grad.data(), Cout) +=
              G.colwise().sum();
      }
    };
  return out;
}

// ---------------- maxpool ----------------

Var maxpool2d(const Var& x) {
  check(x->shape.size() == 4, "maxpool2d: rank 4 expected");
  int B = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
  int H2 = (H + 1) / 2, W2 = (W + 1) / 2;
  Var out = unary(x, {B, H2, W2, C});
  out->val.resize((int64_t)B * H2 * W2 * C);
  std::vector<int64_t> arg((size_t)out->val.size());
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < H2; ++r)
      for (int c = 0; c < W2; ++c)
        for (int ch = 0; ch < C; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int dr = 0; dr < 2; ++dr)
            for (int dc = 0; dc < 2; ++dc) {
              int rr = 2 * r + dr, cc = 2 * c + dc;
              if (rr >= H || cc >= W) continue;
              int64_t idx = (((int64_t)b * H + rr) * W + cc) * C + ch;
              if (x->val(idx) > best) {
                best = x->val(idx);
                best_idx = idx;
              }
            }
          int64_t oidx = (((int64_t)b * H2 + r) * W2 + c) * C + ch;
          out->val(oidx) = best;
          arg[oidx] = best_idx;
        }
  if (out->needs_grad)
    out->backprop = [arg](TensorNode& o) {
      for (int64_t i = 0; i < o.grad.size(); ++i)
        o.parents[0]->grad(arg[i]) += o.grad(i);
    };
  return out;
}

// ---------------- bilinear resize ----------------

Var resize_bilinear(const Var& x, int h2, int w2) {
  check(x->shape.size() == 4, "resize_bilinear: rank 4 expected");
  int B = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
  Var out = unary(x, {B, h2, w2, C});
  out->val.resize((int64_t)B * h2 * w2 * C);
  double sr = h2 > 1 ? (double)(H - 1) / (h2 - 1) : 0.0;
  double sc = w2 > 1 ? (double)(W - 1) / (w2 - 1) : 0.0;
  struct Tap {
    int r0, r1, c0, c1;
    double wr, wc;
  };
  std::vector<Tap> taps((size_t)h2 * w2);
  for (int r = 0; r < h2; ++r)
    for (int c = 0; c < w2; ++c) {
      double fr = r * sr, fc = c * sc;
      Tap t;
      t.r0 = (int)fr;
      t.c0 = (int)fc;
      t.r1 = std::min(t.r0 + 1, H - 1);
      t.c1 = std::min(t.c0 + 1, W - 1);
      t.wr = fr - t.r0;
      t.wc = fc - t.c0;
      taps[(size_t)r * w2 + c] = t;
    }
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < h2; ++r)
      for (int c = 0; c < w2; ++c) {
        const Tap& t = taps[(size_t)r * w2 + c];
        auto at = [&](int rr, int cc) {
          return x->val.segment((((int64_t)b * H + rr) * W + cc) * C, C);
        };
        out->val.segment((((int64_t)b * h2 + r) * w2 + c) * C, C) =
            (1 - t.wr) * ((1 - t.wc) * at(t.r0, t.c0) + t.wc * at(t.r0, t.c1)) +
            t.wr * ((1 - t.wc) * at(t.r1, t.c0) + t.wc * at(t.r1, t.c1));
      }
  if (out->needs_grad)
    out->backprop = [B, H, W, C, h2, w2, taps](TensorNode& o) {
      for (int b = 0; b < B; ++b)
        for (int r = 0; r < h2; ++r)
          for (int c = 0; c < w2; ++c) {
            const Tap& t = taps[(size_t)r * w2 + c];
            auto g = o.grad.segment((((int64_t)b * h2 + r) * w2 + c) * C, C);
            auto acc = [&](int rr, int cc, double w) {
              o.parents[0]->grad.segment((((int64_t)b * H + rr) * W + cc) * C, C) +=
                  w * g;
            };
            acc(t.r0, t.c0, (1 - t.wr) * (1 - t.wc));
            acc(t.r0, t.c1, (1 - t.wr) * t.wc);
            acc(t.r1, t.c0, t.wr * (1 - t.wc));
            acc(t.r1, t.c1, t.wr * t.wc);
          }
    };
  return out;
}

// ---------------- batchnorm ----------------

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Array& run_mean,
              Array& run_var, bool training, bool update_running, double momentum,
              double eps) {
  check(x->shape.size() == 4, "batchnorm: rank 4 expected");
  int C = x->shape[3];
  int64_t rows = x->size() / C;
  check(gamma->shape == std::vector<int>{C} && beta->shape == std::vector<int>{C},
        "batchnorm: affine dims");
  check(run_mean.size() == C && run_var.size() == C, "batchnorm: running dims");

  Array mean(C), var(C);
  if (training) {
    mean.setZero();
    for (int64_t r = 0; r < rows; ++r) mean += x->val.segment(r * C, C);
    mean /= (double)rows;
    var.setZero();
    for (int64_t r = 0; r < rows; ++r)
      var += (x->val.segment(r * C, C) - mean).square();
    var /= (double)rows;
    if (update_running) {
      run_mean = (1 - momentum) * run_mean + momentum * mean;
      run_var = (1 - momentum) * run_var + momentum * var;
    }
  } else {
    mean = run_mean;
    var = run_var;
  }
  Array inv_std = (var + eps).sqrt().inverse();

  Var out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->val.resize(x->size());
  out->needs_grad = x->needs_grad || gamma->needs_grad || beta->needs_grad;
  if (out->needs_grad) out->parents = {x, gamma, beta};

  Array xhat(x->size());
  for (int64_t r = 0; r < rows; ++r) {
    xhat.segment(r * C, C) = (x->val.segment(r * C, C) - mean) * inv_std;
    out->val.segment(r * C, C) = xhat.segment(r * C, C) * gamma->val + beta->val;
  }
  if (out->needs_grad)
    out->backprop = [rows, C, xhat, inv_std, training](TensorNode& o) {
      const Array& gm = o.parents[1]->val;
      Array sum_g = Array::Zero(C), sum_gx = Array::Zero(C);
      for (int64_t r = 0; r < rows; ++r) {
        sum_g += o.grad.segment(r * C, C);
        sum_gx += o.grad.segment(r * C, C) * xhat.segment(r * C, C);
      }
      if (o.parents[1]->needs_grad) o.parents[1]->grad += sum_gx;
      if (o.parents[2]->needs_grad) o.parents[2]->grad += sum_g;
      if (o.parents[0]->needs_grad) {
        if (training) {
          double inv_n = 1.0 / (double)rows;
          for (int64_t r = 0; r < rows; ++r)
            o.parents[0]->grad.segment(r * C, C) +=
                gm * inv_std *
                (o.grad.segment(r * C, C) - inv_n * sum_g -
                 inv_n * xhat.segment(r * C, C) * sum_gx);
        } else {
          for (int64_t r = 0; r < rows; ++r)
            o.parents[0]->grad.segment(r * C, C) +=
                o.grad.segment(r * C, C) * gm * inv_std;
        }
      }
    };
  return out;
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  int nd = (int)x->shape.size();
  int C = x->shape[nd - 1];
  int64_t rows = x->size() / C;
  check(gamma->shape == std::vector<int>{C} && beta->shape == std::vector<int>{C},
        "layernorm: affine dims");
  Var out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->val.resize(x->size());
  out->needs_grad = x->needs_grad || gamma->needs_grad || beta->needs_grad;
  if (out->needs_grad) out->parents = {x, gamma, beta};

  Array xhat(x->size());
  std::vector<double> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    Array row = x->val.segment(r * C, C);
    double mu = row.mean();
    double v = (row - mu).square().mean();
    double is = 1.0 / std::sqrt(v + eps);
    inv_std[r] = is;
    xhat.segment(r * C, C) = (row - mu) * is;
    out->val.segment(r * C, C) = xhat.segment(r * C, C) * gamma->val + beta->val;
  }
  if (out->needs_grad)
    out->backprop = [rows, C, xhat, inv_std](TensorNode& o) {
      const Array& gm = o.parents[1]->val;
      for (int64_t r = 0; r < rows; ++r) {
        Array g = o.grad.segment(r * C, C);
        Array xh = xhat.segment(r * C, C);
        if (o.parents[1]->needs_grad) o.parents[1]->grad += g * xh;
        if (o.parents[2]->needs_grad) o.parents[2]->grad += g;
        if (o.parents[0]->needs_grad) {
          Array gg = g * gm;
          double m1 = gg.mean();
          double m2 = (gg * xh).mean();
          o.parents[0]->grad.segment(r * C, C) += inv_std[r] * (gg - m1 - xh * m2);
        }
      }
    };
  return out;
}

// ---------------- conv3d ----------------

Var conv3d(const Var& x, const Var& w, const Var& b) {
  check(x->shape.size() == 5 && w->shape.size() == 5, "conv3d: rank");
  int B = x->shape[0], D = x->shape[1], H = x->shape[2], W_ = x->shape[3],
      Cin = x->shape[4];
  int kd = w->shape[0], kh = w->shape[1], kw = w->shape[2], Cout = w->shape[4];
  check(w->shape[3] == Cin, "conv3d: channel mismatch");
  check(kd % 2 == 1 && kh % 2 == 1 && kw % 2 == 1, "conv3d: odd kernel expected");
  check(b->shape.size() == 1 && b->shape[0] == Cout, "conv3d: bias dims");
  int pd = kd / 2, ph = kh / 2, pw = kw / 2;

  Var out = std::make_shared<TensorNode>();
  out->shape = {B, D, H, W_, Cout};
  out->val.resize((int64_t)B * D * H * W_ * Cout);
  out->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
  if (out->needs_grad) out->parents = {x, w, b};

  auto xin = [&](int bi, int d, int r, int c) {
    return x->val.data() + ((((int64_t)bi * D + d) * H + r) * W_ + c) * Cin;
  };
  for (int bi = 0; bi < B; ++bi)
    for (int d = 0; d < D; ++d)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W_; ++c) {
          double* o =
              out->val.data() + ((((int64_t)bi * D + d) * H + r) * W_ + c) * Cout;
          for (int ch = 0; ch < Cout; ++ch) o[ch] = b->val(ch);
          for (int dd = -pd; dd <= pd; ++dd) {
            int d2 = d + dd;
            if (d2 < 0 || d2 >= D) continue;
            for (int dr = -ph; dr <= ph; ++dr) {
              int r2 = r + dr;
              if (r2 < 0 || r2 >= H) continue;
              for (int dc = -pw; dc <= pw; ++dc) {
                int c2 = c + dc;
                if (c2 < 0 || c2 >= W_) continue;
                const double* xi = xin(bi, d2, r2, c2);
                const double* wk =
                    w->val.data() +
                    ((((int64_t)(dd + pd) * kh + (dr + ph)) * kw + (dc + pw)) *
                     Cin) *
                        Cout;
                for (int ci = 0; ci < Cin; ++ci)
                  for (int co = 0; co < Cout; ++co)
                    o[co] += xi[ci] * wk[(int64_t)ci * Cout + co];
              }
            }
          }
        }
  if (out->needs_grad)
    out->backprop = [B, D, H, W_, Cin, kd, kh, kw, Cout, pd, ph, pw](TensorNode& o) {
      bool nx = o.parents[0]->needs_grad, nw = o.parents[1]->needs_grad,
           nb = o.parents[2]->needs_grad;
      for (int bi = 0; bi < B; ++bi)
        for (int d = 0; d < D; ++d)
          for (int r = 0; r < H; ++r)
            for (int c = 0; c < W_; ++c) {
              const double* g =
                  o.grad.data() + ((((int64_t)bi * D + d) * H + r) * W_ + c) * Cout;
              if (nb)
                for (int ch = 0; ch < Cout; ++ch) o.parents[2]->grad(ch) += g[ch];
              for (int dd = -pd; dd <= pd; ++dd) {
                int d2 = d + dd;
                if (d2 < 0 || d2 >= D) continue;
                for (int dr = -ph; dr <= ph; ++dr) {
                  int r2 = r + dr;
                  if (r2 < 0 || r2 >= H) continue;
                  for (int dc = -pw; dc <= pw; ++dc) {
                    int c2 = c + dc;
                    if (c2 < 0 || c2 >= W_) continue;
                    int64_t xoff = ((((int64_t)bi * D + d2) * H + r2) * W_ + c2) * Cin;
                    int64_t woff =
                        ((((int64_t)(dd + pd) * kh + (dr + ph)) * kw + (dc + pw)) *
                         Cin) *
                        Cout;
                    for (int ci = 0; ci < Cin; ++ci)
                      for (int co = 0; co < Cout; ++co) {
                        if (nw)
                          o.parents[1]->grad(woff + (int64_t)ci * Cout + co) +=
                              o.parents[0]->val(xoff + ci) * g[co];
                        if (nx)
                          o.parents[0]->grad(xoff + ci) +=
                              o.parents[1]->val(woff + (int64_t)ci * Cout + co) *
                              g[co];
                      }
                  }
                }
              }
            }
    };
  return out;
}

}  // namespace specfuse
