#pragma once

#include "specfuse/nn.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using specfuse::ParamStore;
using specfuse::Var;

// Central finite differences against reverse-mode gradients on a probe set
// of (parameter, index) pairs. build() must construct a fresh scalar graph
// from the current parameter values.
struct ProbeResult {
  double max_rel_err = 0;
  int probes = 0;
};

inline ProbeResult fd_probe(ParamStore& ps, const std::function<Var()>& build,
                            int n_probes, specfuse::Rng& rng, double h = 1e-4) {
  // gather all (param, index) slots
  std::vector<std::pair<Var, int64_t>> slots;
  for (const auto& [name, p] : ps.params()) {
    (void)name;
    for (int64_t i = 0; i < p->size(); ++i) slots.push_back({p, i});
  }
  std::vector<std::pair<Var, int64_t>> picked;
  std::uniform_int_distribution<size_t> pick(0, slots.size() - 1);
  for (int i = 0; i < n_probes; ++i) picked.push_back(slots[pick(rng)]);

  ps.zero_grads();
  Var root = build();
  specfuse::backward(root);

  ProbeResult res;
  for (auto& [p, idx] : picked) {
    double analytic = p->grad.size() == p->val.size() ? p->grad(idx) : 0.0;
    double keep = p->val(idx);
    p->val(idx) = keep + h;
    double up = build()->val(0);
    p->val(idx) = keep - h;
    double dn = build()->val(0);
    p->val(idx) = keep;
    double fd = (up - dn) / (2 * h);
    double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    double rel = std::abs(fd - analytic) / denom;
    if (rel > res.max_rel_err) res.max_rel_err = rel;
    ++res.probes;
  }
  return res;
}

inline specfuse::Array randn(int64_t n, specfuse::Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  specfuse::Array a(n);
  for (int64_t i = 0; i < n; ++i) a(i) = g(rng);
  return a;
}

}  // namespace testutil
