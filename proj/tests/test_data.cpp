#include "specfuse/data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace specfuse;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("specfuse_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("bundle round-trips bit-exact") {
  SceneBundle s = synth_scene({.M = 12, .N = 10, .D = 5, .C = 3, .noise = 0.05, .min_pixels_per_class = 10}, 11);
  std::string dir = tmp_dir("roundtrip");
  save_bundle(s, dir);
  SceneBundle r = load_bundle(dir);
  CHECK(r.M == s.M);
  CHECK(r.D == s.D);
  CHECK(r.class_names == s.class_names);
  // float32 storage: exact equality after one save/load cycle
  save_bundle(r, dir);
  SceneBundle r2 = load_bundle(dir);
  for (int64_t i = 0; i < r.hsi.size(); ++i) CHECK(r2.hsi(i) == r.hsi(i));
  for (int64_t i = 0; i < r.lidar.size(); ++i) CHECK(r2.lidar(i) == r.lidar(i));
  CHECK(r2.labels == r.labels);
}

TEST_CASE("bundle payload size mismatch is a data error") {
  SceneBundle s = synth_scene({.M = 4, .N = 4, .D = 2, .C = 2, .noise = 0.05, .min_pixels_per_class = 2}, 1);
  std::string dir = tmp_dir("mismatch");
  save_bundle(s, dir);
  {
    std::ofstream f(dir + "/hsi.f32", std::ios::binary | std::ios::app);
    float extra = 0.f;
    f.write(reinterpret_cast<char*>(&extra), 4);
  }
  CHECK_THROWS_AS(load_bundle(dir), DataError);
}

TEST_CASE("label out of range fails validation") {
  SceneBundle s = synth_scene({.M = 4, .N = 4, .D = 2, .C = 2, .noise = 0.05, .min_pixels_per_class = 2}, 1);
  s.labels[0] = 3;  // C+1
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("pca: full-rank identity reconstruction") {
  SceneBundle s = synth_scene({.M = 10, .N = 10, .D = 6, .C = 3, .noise = 0.05, .min_pixels_per_class = 8}, 5);
  PcaResult p = pca_reduce(s, 6);
  // X ~ (X - mean) P P^T + mean
  for (int r = 0; r < s.M; ++r)
    for (int c = 0; c < s.N; ++c) {
      Eigen::VectorXd x(6), z(6);
      for (int b = 0; b < 6; ++b) x(b) = s.hsi_at(r, c, b);
      z = x - p.mean;
      Eigen::VectorXd back = p.projection * (p.projection.transpose() * z) + p.mean;
      for (int b = 0; b < 6; ++b) CHECK(std::abs(back(b) - x(b)) <= 1e-5);
    }
  CHECK(p.scene.pca_applied);
}

TEST_CASE("pca: rank-1 cube explains everything with one band") {
  SceneBundle s = synth_scene({.M = 8, .N = 8, .D = 4, .C = 2, .noise = 0.05, .min_pixels_per_class = 6}, 3);
  // make every band a scalar multiple of band 0
  for (int r = 0; r < s.M; ++r)
    for (int c = 0; c < s.N; ++c) {
      double v = s.hsi_at(r, c, 0);
      for (int b = 1; b < 4; ++b)
        s.hsi(((int64_t)r * s.N + c) * 4 + b) = (b + 1.0) * v;
    }
  PcaResult p = pca_reduce(s, 1);
  CHECK(p.explained_variance_ratio.size() == 1);
  CHECK(p.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pca: projection has orthonormal columns, d sets depth") {
  SceneBundle s = synth_scene({.M = 12, .N = 12, .D = 9, .C = 3, .noise = 0.05, .min_pixels_per_class = 10}, 7);
  PcaResult p = pca_reduce(s, 4);
  CHECK(p.scene.D == 4);
  Eigen::MatrixXd g = p.projection.transpose() * p.projection;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(std::abs(g(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
}

TEST_CASE("normalize: affine map and conventions") {
  SceneBundle s = synth_scene({.M = 6, .N = 6, .D = 3, .C = 2, .noise = 0.05, .min_pixels_per_class = 4}, 9);
  // plant a known channel: min 2, max 6, probe 4 -> 0.5; constant channel -> 0
  for (int i = 0; i < 36; ++i) s.hsi(i * 3 + 0) = 2.0 + 4.0 * (i / 35.0);
  s.hsi(17 * 3 + 0) = 4.0;
  for (int i = 0; i < 36; ++i) s.hsi(i * 3 + 1) = 7.0;
  SceneBundle n = normalize(s);
  CHECK(n.hsi_at(17 / 6, 17 % 6, 0) == doctest::Approx(0.5).epsilon(1e-9));
  for (int i = 0; i < 36; ++i) CHECK(n.hsi(i * 3 + 1) == 0.0);
  double mn = 1e9, mx = -1e9;
  for (int i = 0; i < 36; ++i) {
    mn = std::min(mn, n.hsi(i * 3 + 2));
    mx = std::max(mx, n.hsi(i * 3 + 2));
  }
  CHECK(mn == doctest::Approx(0.0));
  CHECK(mx == doctest::Approx(1.0));
  CHECK(n.normalized);
}

TEST_CASE("patch split: per-class counts and batch size") {
  // 6-class split with the (13,13,11,15,18,12) counts -> 82 train patches
  SceneBundle s = synth_scene({.M = 48, .N = 48, .D = 4, .C = 6}, 21);
  SplitSpec split;
  split.per_class_train_counts = {13, 13, 11, 15, 18, 12};
  split.seed = 5;
  auto [train, test] = extract_patches(s, split, 5);
  CHECK(train.B == 82);
  int labeled = 0;
  for (int32_t l : s.labels) labeled += l != 0;
  CHECK(test.B == labeled - 82);

  // all-zero counts: everything labeled lands in test
  SplitSpec zero;
  zero.per_class_train_counts.assign(6, 0);
  auto [t0, t1] = extract_patches(s, zero, 5);
  CHECK(t0.B == 0);
  CHECK(t1.B == labeled);
}

TEST_CASE("patch split: same seed gives identical centers") {
  SceneBundle s = synth_scene({.M = 32, .N = 32, .D = 3, .C = 4}, 13);
  SplitSpec split;
  split.per_class_train_counts.assign(4, 5);
  split.seed = 77;
  auto [a, a2] = extract_patches(s, split, 7);
  auto [b, b2] = extract_patches(s, split, 7);
  CHECK(a.centers == b.centers);
  CHECK(a2.centers == b2.centers);
}

TEST_CASE("mirror padding reflects about the edge") {
  SceneBundle s = synth_scene({.M = 8, .N = 8, .D = 2, .C = 2, .noise = 0.05, .min_pixels_per_class = 6}, 3);
  const int patch = 5;
  std::vector<double> hsi(patch * patch * 2), lid(patch * patch);
  extract_patch_at(s, 0, 0, patch, hsi.data(), lid.data());
  // patch row index 2 is scene row 0; row 1 mirrors scene row 1, row 0 row 2
  for (int pc = 0; pc < patch; ++pc) {
    int sc = std::abs(pc - 2);
    for (int b = 0; b < 2; ++b) {
      CHECK(hsi[(0 * patch + pc) * 2 + b] == s.hsi_at(2, sc, b));
      CHECK(hsi[(1 * patch + pc) * 2 + b] == s.hsi_at(1, sc, b));
    }
  }
  // center pixel
  CHECK(hsi[(2 * patch + 2) * 2 + 0] == s.hsi_at(0, 0, 0));
  CHECK(lid[2 * patch + 2] == s.lidar(0));
}

TEST_CASE("synthetic scenes: coverage, determinism, zero-noise purity") {
  SceneBundle a = synth_scene({.M = 64, .N = 64, .D = 8, .C = 6}, 42);
  std::vector<int> hist(7, 0);
  for (int32_t l : a.labels) ++hist[(size_t)l];
  for (int c = 1; c <= 6; ++c) CHECK(hist[(size_t)c] >= 50);

  SceneBundle b = synth_scene({.M = 64, .N = 64, .D = 8, .C = 6}, 42);
  for (int64_t i = 0; i < a.hsi.size(); ++i) CHECK(a.hsi(i) == b.hsi(i));
  CHECK(a.labels == b.labels);

  SceneBundle pure = synth_scene({.M = 16, .N = 16, .D = 4, .C = 2, .noise = 0.0, .min_pixels_per_class = 20}, 9);
  // within a class all spectra identical
  std::vector<std::vector<double>> ref(3);
  for (int i = 0; i < 256; ++i) {
    int l = pure.labels[(size_t)i];
    std::vector<double> px(4);
    for (int b = 0; b < 4; ++b) px[(size_t)b] = pure.hsi(i * 4 + b);
    if (ref[(size_t)l].empty())
      ref[(size_t)l] = px;
    else
      CHECK(ref[(size_t)l] == px);
  }
}
