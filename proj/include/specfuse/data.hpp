#pragma once

// Scene bundles on disk, PCA band reduction, normalization, patch
// extraction and the synthetic-scene generator.
//
// Bundle directory layout (all little-endian):
//   header.json  - dims, class names, palette, processing flags
//   hsi.f32      - float32, row-major, band-interleaved per pixel [M,N,D]
//   lidar.f32    - float32 [M,N]
//   labels.i32   - int32 [M,N], 0 = unlabeled

#include "specfuse/errors.hpp"

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace specfuse {

using Arrayd = Eigen::ArrayXd;

struct SceneBundle {
  int M = 0, N = 0, D = 0, C = 0;
  std::vector<std::string> class_names;
  std::vector<std::array<uint8_t, 3>> palette;
  Arrayd hsi;                // [M*N*D], pixel-interleaved bands
  Arrayd lidar;              // [M*N]
  std::vector<int32_t> labels;  // [M*N]
  bool pca_applied = false;
  bool normalized = false;

  double hsi_at(int r, int c, int band) const {
    return hsi(((int64_t)r * N + c) * D + band);
  }
  void validate() const;  // throws DataError on invariant violations
};

void save_bundle(const SceneBundle& scene, const std::string& dir);
SceneBundle load_bundle(const std::string& dir);

// Projects onto the top-d covariance eigenvectors (descending eigenvalue,
// sign fixed so each eigenvector's largest-magnitude entry is positive).
struct PcaResult {
  SceneBundle scene;
  Eigen::MatrixXd projection;       // D x d, orthonormal columns
  Eigen::VectorXd mean;             // D
  std::vector<double> explained_variance_ratio;  // length d
};
PcaResult pca_reduce(const SceneBundle& scene, int d);

// Per-channel min-max to [0,1]; constant channels map to 0.
SceneBundle normalize(const SceneBundle& scene);

struct SplitSpec {
  std::vector<int> per_class_train_counts;
  uint64_t seed = 0;
  bool remainder_is_test = true;
};

struct PatchBatch {
  int B = 0, m = 0, n = 0, d = 0;
  Arrayd x_hsi;   // [B,m,n,d]
  Arrayd x_lid;   // [B,m,n,1]
  std::vector<int> y;                      // 1..C
  std::vector<std::pair<int, int>> centers;
};

// Mirror-padded window extraction around labeled centers; train selection is
// per-class random without replacement under split.seed.
std::pair<PatchBatch, PatchBatch> extract_patches(const SceneBundle& scene,
                                                  const SplitSpec& split,
                                                  int patch);

// Single patch centered at (r,c) with mirror padding (used by predict).
void extract_patch_at(const SceneBundle& scene, int r, int c, int patch,
                      double* out_hsi, double* out_lid);

struct SynthConfig {
  int M = 64, N = 64, D = 32, C = 6;
  double noise = 0.05;
  int min_pixels_per_class = 50;
  int max_retries = 64;
};

// Deterministic synthetic scene: Voronoi class regions, per-class Gaussian
// spectral bumps, per-class LiDAR heights, i.i.d. observation noise.
SceneBundle synth_scene(const SynthConfig& cfg, uint64_t seed);

}  // namespace specfuse
