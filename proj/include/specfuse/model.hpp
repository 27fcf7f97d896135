#pragma once

// Full model: diffusion-based feature fusion feeding the vision head,
// plus the prompt tower, assembled around one parameter store.

#include "specfuse/config.hpp"
#include "specfuse/data.hpp"
#include "specfuse/diffusion.hpp"
#include "specfuse/losses.hpp"
#include "specfuse/text.hpp"
#include "specfuse/vision.hpp"

#include <array>
#include <memory>
#include <vector>

namespace specfuse {

struct LossTermToggle {
  bool use_c = true, use_n = true, use_m = true;
};

struct StepResult {
  Var total;            // scalar graph root
  LossBreakdown values; // detached numbers for logging
};

struct Prediction {
  std::vector<int> labels;             // 1..C per sample
  std::vector<double> confidence;      // softmax max per sample
};

class FusModel {
 public:
  // Builds vocab from the manifest corpus and initializes all weights.
  void init(const RunConfig& cfg, const PromptManifest& manifest, Rng& rng);

  // One training forward pass. x_hsi [B,m,n,d], x_lid [B,m,n,1] are clean
  // patches; noise and t are sampled by the caller so steps replay exactly.
  StepResult training_step(const Arrayd& x_hsi, const Arrayd& x_lid, int B,
                           int m, int n, const std::vector<int>& labels_1based,
                           const std::vector<int>& anchors, int t,
                           const Array& noise_hsi, const Array& noise_lid,
                           const LossTermToggle& toggle = {},
                           bool update_running = true);

  // Inference: lightly corrupts at inference_t with zero noise draw, runs the
  // fusion network with running statistics, classifies.
  Prediction predict(const Arrayd& x_hsi, const Arrayd& x_lid, int B, int m,
                     int n) const;

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const RunConfig& config() const { return cfg_; }
  const BPEVocab& vocab() const { return vocab_; }
  const PromptManifest& manifest() const { return manifest_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  int num_classes() const { return C_; }
  FusionDenoiser& denoiser() { return denoiser_; }
  VisionHead& vision() { return vision_; }

  // Prompt embeddings for the four branches, refined: each [C, s].
  std::array<Var, 4> prompt_embeddings() const;

  Var temperature() const;

 private:
  RunConfig cfg_;
  PromptManifest manifest_;
  int C_ = 0;
  ParamStore ps_;
  DiffusionSchedule sched_;
  BPEVocab vocab_;
  std::vector<TokenSequence> prompt_tokens_;  // 4C rows: T_c block then T_d1..3
  FusionDenoiser denoiser_;
  VisionHead vision_;
  TextEncoder text_;
  PromptRefiner refiner_;
  Var log_temp_;  // null when temperature is frozen at 1
};

}  // namespace specfuse
