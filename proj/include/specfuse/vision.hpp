#pragma once

// 3D-residual multimodal feature encoder plus the classification and
// shared-space projection heads.

#include "specfuse/errors.hpp"
#include "specfuse/nn.hpp"

#include <string>

namespace specfuse {

enum class HeadPooling { kAvg, kFlatten };
HeadPooling parse_head_pooling(const std::string& name);

struct VisionConfig {
  int in_ch = 96;       // fused channels
  int patch = 25;
  int conv3d_ch = 16;
  HeadPooling pooling = HeadPooling::kAvg;
  int shared_dim = 512;  // s
  int num_classes = 6;
  int feature_dim() const {
    return pooling == HeadPooling::kAvg ? in_ch * conv3d_ch
                                        : in_ch * patch * patch * conv3d_ch;
  }
};

class VisionHead {
 public:
  void init(ParamStore& ps, const VisionConfig& cfg, Rng& rng);

  // [B,m,n,F] treated as a single-channel volume with the channel axis as
  // depth; sigma(Conv3D(Conv3D(x)) + Conv3D(x)), pooled and flattened.
  Var extract_features(const Var& fused) const;
  Var class_logits(const Var& feats) const;  // [B, C] (pre-softmax)
  Var project(const Var& feats) const;       // [B, s]

  const VisionConfig& config() const { return cfg_; }

 private:
  VisionConfig cfg_;
  Conv3dLayer conv_a_, conv_b_, conv_skip_;
  Linear fc_cls_, fc_proj_;
};

}  // namespace specfuse
