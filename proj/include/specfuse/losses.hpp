#pragma once

// Prompt-multimodality cosine alignment and the multitask loss system.

#include "specfuse/errors.hpp"
#include "specfuse/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace specfuse {

struct SimilarityLogits {
  Var v2t;  // [B, C]
  Var t2v;  // [C, B], exact transpose of v2t
};

// Rows of both inputs are L2-normalized; logits scaled by temperature.
// temperature is a scalar Var (learnable or frozen by the caller).
SimilarityLogits similarity(const Var& f_text, const Var& f_vis,
                            const Var& temperature);

// 1/2 (MSE_hsi + MSE_lid); targets are constants.
Var loss_noise(const Var& n_hsi_pred, const Array& n_hsi_true,
               const Var& n_lid_pred, const Array& n_lid_true);

// mean over batch of -log softmax(logits)[y]; labels are 0-based here.
Var loss_classification(const Var& logits, const std::vector<int>& labels);

enum class SymmetricCeMode { kAnchor, kSimple };
SymmetricCeMode parse_symmetric_ce(const std::string& name);

struct ConsistencyLosses {
  Var loss_mc, loss_md, loss_m;
};

// labels: 0-based class per batch sample; anchors: for each class c, the
// batch index of its designated anchor sample (used as the t2v target).
// In kSimple mode the t2v half is replaced by CE(v2t, y).
ConsistencyLosses loss_consistency(const SimilarityLogits& sims_c,
                                   const std::array<SimilarityLogits, 3>& sims_d,
                                   const std::vector<int>& labels,
                                   const std::vector<int>& anchors, double alpha,
                                   SymmetricCeMode mode);

struct LossBreakdown {
  double loss_c = 0, loss_n = 0, loss_mc = 0, loss_md = 0, loss_m = 0, total = 0;
  double alpha = 0;
  std::array<double, 3> lambdas{};
};

void validate_lambdas(const std::array<double, 3>& lambdas);

// total = l1 loss_C + l2 loss_N + l3 loss_M (graph node, for backprop).
Var loss_total(const Var& loss_c, const Var& loss_n, const Var& loss_m,
               const std::array<double, 3>& lambdas);

}  // namespace specfuse
