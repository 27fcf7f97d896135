#include "specfuse/vision.hpp"

namespace specfuse {

HeadPooling parse_head_pooling(const std::string& name) {
  if (name == "avg") return HeadPooling::kAvg;
  if (name == "flatten") return HeadPooling::kFlatten;
  throw ConfigError("unknown head_pooling: " + name);
}

void VisionHead::init(ParamStore& ps, const VisionConfig& cfg, Rng& rng) {
  cfg_ = cfg;
  conv_a_.init(ps, "spectral.conv_a", 3, 1, cfg.conv3d_ch, rng);
  conv_b_.init(ps, "spectral.conv_b", 3, cfg.conv3d_ch, cfg.conv3d_ch, rng);
  conv_skip_.init(ps, "spectral.conv_skip", 3, 1, cfg.conv3d_ch, rng);
  fc_cls_.init(ps, "head.cls", cfg.feature_dim(), cfg.num_classes, rng);
  fc_proj_.init(ps, "head.proj", cfg.feature_dim(), cfg.shared_dim, rng);
}

Var VisionHead::extract_features(const Var& fused) const {
  int B = fused->shape[0], m = fused->shape[1], n = fused->shape[2],
      F = fused->shape[3];
  if (m < 3 || n < 3 || F < 3)
    throw DataError("spectral extractor: input smaller than the 3D kernel");
  // [B,m,n,F] -> [B,F,m,n,1]: channels become the depth axis
  Var vol = reshape(permute(fused, {0, 3, 1, 2}), {B, F, m, n, 1});
  Var h = relu(add(conv_b_(conv_a_(vol)), conv_skip_(vol)));  // [B,F,m,n,k]
  if (cfg_.pooling == HeadPooling::kAvg) {
    Var pooled = mean_axes23(h);  // [B,F,k]
    return reshape(pooled, {B, F * cfg_.conv3d_ch});
  }
  return reshape(h, {B, F * m * n * cfg_.conv3d_ch});
}

Var VisionHead::class_logits(const Var& feats) const { return fc_cls_(feats); }

Var VisionHead::project(const Var& feats) const { return fc_proj_(feats); }

}  // namespace specfuse
