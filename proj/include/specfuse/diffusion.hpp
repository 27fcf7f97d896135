#pragma once

// Noise schedule, closed-form forward diffusion, and the two-branch
// reverse U-Net: residual encoders, adaptive fusion, symmetric decoder
// with skip connections, and noise-prediction heads.

#include "specfuse/errors.hpp"
#include "specfuse/nn.hpp"

#include <string>
#include <vector>

namespace specfuse {

struct DiffusionSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  int T() const { return (int)beta.size(); }
};

// Linear beta interpolation; alpha_bar as the exact running product.
DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, t in 1..T.
Array forward_diffuse(const Array& x0, int t, const Array& noise,
                      const DiffusionSchedule& sched);

enum class FusionStrategy { kNone, kSum, kConcat, kWeightedSum, kWeightedConcat, kAdaptive };
FusionStrategy parse_fusion_strategy(const std::string& name);
std::string fusion_strategy_name(FusionStrategy s);

struct DenoiserConfig {
  int in_ch_hsi = 15;            // d after PCA
  std::vector<int> enc_filters{32, 64, 64};
  std::vector<int> dec_filters{64, 32, 32};
  int head_ch = 48;              // per-branch conv before the 96-ch concat
  int time_dim = 32;
  FusionStrategy fusion = FusionStrategy::kAdaptive;
  int fused_ch() const { return 2 * enc_filters.back(); }
};

struct ResBlock2d {
  Conv2dLayer conv1, conv2, proj;
  BatchNormLayer bn1, bn2;
  bool has_proj = false;
  void init(ParamStore& ps, const std::string& name, int cin, int cout, Rng& rng);
  Var operator()(const Var& x, bool training, bool update_running) const;
};

struct EncoderTrace {
  std::vector<Var> skips;  // pre-downsample feature maps, one per downsample
  Var bottleneck;
};

// One modality branch of the encoder (U = 3 blocks, downsample after 0 and 1).
class BranchEncoder {
 public:
  void init(ParamStore& ps, const std::string& name, int cin,
            const DenoiserConfig& cfg, Rng& rng);
  EncoderTrace encode(const Var& x, const Var& temb, bool training,
                      bool update_running) const;

 private:
  std::vector<ResBlock2d> blocks_;
  std::vector<Conv2dLayer> down_proj_;
  std::vector<Linear> time_proj_;
};

struct FusionOutputs {
  Var fused;             // [B,h,w,2*f2]
  Var mask_hsi, mask_lid;  // [B,h,w,1]; null unless a weighted strategy
};

class AdaptiveFusion {
 public:
  void init(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng);
  FusionOutputs fuse(const Var& x_hsi, const Var& x_lid) const;
  // Test hook: overwrite the mask-logit conv so the softmax saturates.
  Conv2dLayer& mask_conv() { return mask_conv_; }

 private:
  FusionStrategy strategy_ = FusionStrategy::kAdaptive;
  Conv2dLayer mask_conv_, fuse_conv_;
  bool has_mask_ = false;
};

struct DecoderOutputs {
  Var x_hsi_dec, x_lid_dec;      // [B,m,n,dec_f2]
  Var fused;                  // [B,m,n,2*head_ch]
  Var n_hsi_pred, n_lid_pred;    // match the injected noise shapes
};

class BranchDecoder {
 public:
  void init(ParamStore& ps, const std::string& name, const DenoiserConfig& cfg,
            int noise_ch, Rng& rng);
  // returns (x''' feature map, noise prediction, per-branch fusion conv out)
  struct Out {
    Var feat, noise, head;
  };
  Out decode(const Var& fused, const EncoderTrace& trace, const Var& temb,
             bool training, bool update_running) const;

 private:
  Conv2dLayer split_;  // 1x1 from fused channels
  std::vector<ResBlock2d> blocks_;
  std::vector<Conv2dLayer> merge_;
  std::vector<Linear> time_proj_;
  Conv2dLayer head_, noise_head_;
};

// Full FusionDenoiser network over both modalities.
class FusionDenoiser {
 public:
  void init(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng);
  struct Out {
    EncoderTrace enc_hsi, enc_lid;
    FusionOutputs fusion;
    DecoderOutputs dec;
  };
  Out forward(const Var& x_hsi_noisy, const Var& x_lid_noisy,
              const std::vector<int>& t, bool training,
              bool update_running) const;
  const DenoiserConfig& config() const { return cfg_; }
  AdaptiveFusion& fusion() { return fusion_; }

 private:
  DenoiserConfig cfg_;
  BranchEncoder enc_hsi_, enc_lid_;
  AdaptiveFusion fusion_;
  BranchDecoder dec_hsi_, dec_lid_;
};

}  // namespace specfuse
