#pragma once

// Training loop with class-balanced batches, batch/scene prediction
// drivers, evaluation and the ablation sweeps.

#include "specfuse/metrics.hpp"
#include "specfuse/model.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace specfuse {

struct StepRecord {
  int step = 0, epoch = 0, t = 0;
  LossBreakdown loss;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  double seconds = 0;
};

// Each batch holds samples_per_class draws per class; sample 0 of each class
// block is that class's anchor. One shared timestep per step.
TrainHistory train_model(FusModel& model, const PatchBatch& train,
                         const LossTermToggle& toggle = {},
                         std::ostream* log = nullptr);

// Argmax predictions in eval_batch chunks; returns 1..C per sample.
std::vector<int32_t> predict_batches(const FusModel& model, const PatchBatch& data);

MetricsReport evaluate_batches(const FusModel& model, const PatchBatch& data);

// Full-scene classification map [M*N]. labeled_only keeps 0 where the
// ground truth is 0. Parallel over chunks when jobs > 1.
std::vector<int32_t> predict_scene(const FusModel& model, const SceneBundle& scene,
                                   bool labeled_only, int jobs);

struct AblationRow {
  std::string setting;
  double oa = 0, aa = 0, kappa = 0;
  double train_seconds = 0;
  int64_t param_count = 0;
};

// axis: fusion | loss_terms | lambdas | prompt_depth | patch | pca_dim
std::vector<AblationRow> run_ablation(const std::string& axis, const RunConfig& base,
                                      const SceneBundle& scene,
                                      const PromptManifest& manifest,
                                      std::ostream& log);

std::string format_ablation(const std::string& axis, const std::vector<AblationRow>& rows);

}  // namespace specfuse
