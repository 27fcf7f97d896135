#include "specfuse/losses.hpp"

#include <cmath>

namespace specfuse {

SimilarityLogits similarity(const Var& f_text, const Var& f_vis,
                            const Var& temperature) {
  if (f_text->shape.size() != 2 || f_vis->shape.size() != 2 ||
      f_text->shape[1] != f_vis->shape[1])
    throw DataError("similarity: embedding width mismatch");
  if (!(temperature->val(0) > 0.0))
    throw NumericError("similarity: temperature must be positive");
  Var tn = l2_normalize_rows(f_text);
  Var vn = l2_normalize_rows(f_vis);
  Var v2t = mul_scalar_var(matmul(vn, permute(tn, {1, 0})), temperature);
  SimilarityLogits out;
  out.v2t = v2t;
  out.t2v = permute(v2t, {1, 0});
  return out;
}

Var loss_noise(const Var& n_hsi_pred, const Array& n_hsi_true,
               const Var& n_lid_pred, const Array& n_lid_true) {
  if (n_hsi_pred->val.size() != n_hsi_true.size() ||
      n_lid_pred->val.size() != n_lid_true.size())
    throw DataError("loss_noise: prediction/target shape mismatch");
  Var dh = add_const(n_hsi_pred, -n_hsi_true);
  Var dl = add_const(n_lid_pred, -n_lid_true);
  Var mse_h = mean_all(mul(dh, dh));
  Var mse_l = mean_all(mul(dl, dl));
  return scale(add(mse_h, mse_l), 0.5);
}

Var loss_classification(const Var& logits, const std::vector<int>& labels) {
  return cross_entropy_logits(logits, labels);
}

SymmetricCeMode parse_symmetric_ce(const std::string& name) {
  if (name == "anchor") return SymmetricCeMode::kAnchor;
  if (name == "simple") return SymmetricCeMode::kSimple;
  throw ConfigError("unknown symmetric_ce mode: " + name);
}

namespace {
Var symmetric_pair(const SimilarityLogits& sims, const std::vector<int>& labels,
                   const std::vector<int>& anchors, SymmetricCeMode mode) {
  Var ce_v2t = cross_entropy_logits(sims.v2t, labels);
  Var ce_t2v = mode == SymmetricCeMode::kAnchor
                   ? cross_entropy_logits(sims.t2v, anchors)
                   : cross_entropy_logits(sims.v2t, labels);
  return scale(add(ce_v2t, ce_t2v), 0.5);
}
}  // namespace

ConsistencyLosses loss_consistency(const SimilarityLogits& sims_c,
                                   const std::array<SimilarityLogits, 3>& sims_d,
                                   const std::vector<int>& labels,
                                   const std::vector<int>& anchors, double alpha,
                                   SymmetricCeMode mode) {
  if (mode == SymmetricCeMode::kAnchor) {
    int C = sims_c.t2v->shape[0];
    int B = sims_c.t2v->shape[1];
    if ((int)anchors.size() != C)
      throw DataError(
          "loss_consistency: class-balanced batch required; a class is missing "
          "its anchor sample");
    for (int a : anchors)
      if (a < 0 || a >= B)
        throw DataError("loss_consistency: anchor index out of batch range");
  }
  ConsistencyLosses out;
  out.loss_mc = symmetric_pair(sims_c, labels, anchors, mode);
  Var md = symmetric_pair(sims_d[0], labels, anchors, mode);
  md = add(md, symmetric_pair(sims_d[1], labels, anchors, mode));
  md = add(md, symmetric_pair(sims_d[2], labels, anchors, mode));
  out.loss_md = scale(md, 1.0 / 3.0);
  out.loss_m = add(scale(out.loss_mc, alpha), scale(out.loss_md, 1.0 - alpha));
  return out;
}

void validate_lambdas(const std::array<double, 3>& lambdas) {
  double sum = lambdas[0] + lambdas[1] + lambdas[2];
  for (double l : lambdas)
    if (l < 0.0) throw ConfigError("lambda: weights must be non-negative");
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("lambda: weights must sum to 1 (got " +
                      std::to_string(sum) + ")");
}

Var loss_total(const Var& loss_c, const Var& loss_n, const Var& loss_m,
               const std::array<double, 3>& lambdas) {
  validate_lambdas(lambdas);
  return add(add(scale(loss_c, lambdas[0]), scale(loss_n, lambdas[1])),
             scale(loss_m, lambdas[2]));
}

}  // namespace specfuse
