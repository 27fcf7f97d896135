#include "specfuse/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"

namespace specfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int mirror_index(int i, int n) {
  // reflect about the edge pixel; valid for patch < 2n
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

void write_raw(const fs::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(data), (std::streamsize)bytes);
}

std::vector<char> read_raw(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("missing file: " + p.string());
  std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> buf((size_t)n);
  f.read(buf.data(), n);
  return buf;
}

}  // namespace

void SceneBundle::validate() const {
  if (M <= 0 || N <= 0 || D <= 0 || C <= 0)
    throw DataError("bundle: non-positive dimensions");
  if ((int)class_names.size() != C) throw DataError("bundle: class_names size != C");
  if ((int)palette.size() != C) throw DataError("bundle: palette size != C");
  if (hsi.size() != (int64_t)M * N * D) throw DataError("bundle: hsi size mismatch");
  if (lidar.size() != (int64_t)M * N) throw DataError("bundle: lidar size mismatch");
  if ((int64_t)labels.size() != (int64_t)M * N)
    throw DataError("bundle: labels size mismatch");
  if (!hsi.isFinite().all() || !lidar.isFinite().all())
    throw DataError("bundle: NaN/Inf in arrays");
  std::vector<bool> present(C + 1, false);
  for (int32_t l : labels) {
    if (l < 0 || l > C)
      throw DataError("bundle: label " + std::to_string(l) + " outside 0.." +
                      std::to_string(C));
    present[l] = true;
  }
  for (int c = 1; c <= C; ++c)
    if (!present[c])
      throw DataError("bundle: class " + std::to_string(c) + " has no pixels");
}

void save_bundle(const SceneBundle& scene, const std::string& dir) {
  scene.validate();
  fs::create_directories(dir);
  json h;
  h["M"] = scene.M;
  h["N"] = scene.N;
  h["D"] = scene.D;
  h["C"] = scene.C;
  h["class_names"] = scene.class_names;
  json pal = json::array();
  for (auto& p : scene.palette) pal.push_back({p[0], p[1], p[2]});
  h["palette"] = pal;
  h["dtype"] = {{"hsi", "f32"}, {"lidar", "f32"}, {"labels", "i32"}};
  h["pca_applied"] = scene.pca_applied;
  h["normalized"] = scene.normalized;
  std::ofstream hf(fs::path(dir) / "header.json");
  hf << h.dump(2) << "\n";

  std::vector<float> fbuf(scene.hsi.size());
  for (int64_t i = 0; i < scene.hsi.size(); ++i) fbuf[i] = (float)scene.hsi(i);
  write_raw(fs::path(dir) / "hsi.f32", fbuf.data(), fbuf.size() * 4);
  fbuf.resize(scene.lidar.size());
  for (int64_t i = 0; i < scene.lidar.size(); ++i) fbuf[i] = (float)scene.lidar(i);
  write_raw(fs::path(dir) / "lidar.f32", fbuf.data(), fbuf.size() * 4);
  write_raw(fs::path(dir) / "labels.i32", scene.labels.data(),
            scene.labels.size() * 4);
}

SceneBundle load_bundle(const std::string& dir) {
  fs::path hp = fs::path(dir) / "header.json";
  std::ifstream hf(hp);
  if (!hf) throw DataError("missing file: " + hp.string());
  json h;
  try {
    hf >> h;
  } catch (const std::exception& e) {
    throw DataError("bad header.json: " + std::string(e.what()));
  }
  SceneBundle s;
  s.M = h.at("M").get<int>();
  s.N = h.at("N").get<int>();
  s.D = h.at("D").get<int>();
  s.C = h.at("C").get<int>();
  s.class_names = h.at("class_names").get<std::vector<std::string>>();
  for (auto& p : h.at("palette")) {
    s.palette.push_back({p.at(0).get<uint8_t>(), p.at(1).get<uint8_t>(),
                         p.at(2).get<uint8_t>()});
  }
  s.pca_applied = h.value("pca_applied", false);
  s.normalized = h.value("normalized", false);

  auto hsi_raw = read_raw(fs::path(dir) / "hsi.f32");
  if (hsi_raw.size() != (size_t)s.M * s.N * s.D * 4)
    throw DataError("hsi.f32 payload size does not match header dimensions");
  auto lid_raw = read_raw(fs::path(dir) / "lidar.f32");
  if (lid_raw.size() != (size_t)s.M * s.N * 4)
    throw DataError("lidar.f32 payload size does not match header dimensions");
  auto lab_raw = read_raw(fs::path(dir) / "labels.i32");
  if (lab_raw.size() != (size_t)s.M * s.N * 4)
    throw DataError("labels.i32 payload size does not match header dimensions");

  const float* hp_ = reinterpret_cast<const float*>(hsi_raw.data());
  s.hsi.resize((int64_t)s.M * s.N * s.D);
  for (int64_t i = 0; i < s.hsi.size(); ++i) s.hsi(i) = hp_[i];
  const float* lp = reinterpret_cast<const float*>(lid_raw.data());
  s.lidar.resize((int64_t)s.M * s.N);
  for (int64_t i = 0; i < s.lidar.size(); ++i) s.lidar(i) = lp[i];
  const int32_t* bp = reinterpret_cast<const int32_t*>(lab_raw.data());
  s.labels.assign(bp, bp + (int64_t)s.M * s.N);

  s.validate();
  return s;
}

PcaResult pca_reduce(const SceneBundle& scene, int d) {
  if (d < 1 || d > scene.D)
    throw DataError("pca: d must be in 1..D, got " + std::to_string(d));
  int64_t P = (int64_t)scene.M * scene.N;
  if (P < 2) throw DataError("pca: need at least 2 pixels");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(scene.D);
  for (int64_t p = 0; p < P; ++p)
    for (int b = 0; b < scene.D; ++b) mean(b) += scene.hsi(p * scene.D + b);
  mean /= (double)P;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(scene.D, scene.D);
  Eigen::VectorXd x(scene.D);
  for (int64_t p = 0; p < P; ++p) {
    for (int b = 0; b < scene.D; ++b) x(b) = scene.hsi(p * scene.D + b) - mean(b);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= (double)(P - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca: eigensolver failed");
  // ascending -> take the tail in reverse
  Eigen::MatrixXd proj(scene.D, d);
  std::vector<double> evr(d);
  double total = std::max(es.eigenvalues().sum(), 1e-300);
  for (int j = 0; j < d; ++j) {
    int src = scene.D - 1 - j;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    int imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    proj.col(j) = v;
    evr[j] = std::max(es.eigenvalues()(src), 0.0) / total;
  }

  PcaResult out;
  out.projection = proj;
  out.mean = mean;
  out.explained_variance_ratio = evr;
  out.scene = scene;
  out.scene.D = d;
  out.scene.hsi.resize(P * d);
  out.scene.pca_applied = true;
  for (int64_t p = 0; p < P; ++p) {
    for (int b = 0; b < scene.D; ++b) x(b) = scene.hsi(p * scene.D + b) - mean(b);
    Eigen::VectorXd y = proj.transpose() * x;
    for (int j = 0; j < d; ++j) out.scene.hsi(p * d + j) = y(j);
  }
  return out;
}

SceneBundle normalize(const SceneBundle& scene) {
  SceneBundle out = scene;
  int64_t P = (int64_t)scene.M * scene.N;
  for (int b = 0; b < scene.D; ++b) {
    double lo = scene.hsi(b), hi = scene.hsi(b);
    for (int64_t p = 0; p < P; ++p) {
      double v = scene.hsi(p * scene.D + b);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double span = hi - lo;
    for (int64_t p = 0; p < P; ++p)
      out.hsi(p * scene.D + b) =
          span > 0 ? (scene.hsi(p * scene.D + b) - lo) / span : 0.0;
  }
  double lo = scene.lidar.minCoeff(), hi = scene.lidar.maxCoeff();
  double span = hi - lo;
  out.lidar = span > 0 ? ((scene.lidar - lo) / span).eval()
                       : Arrayd::Zero(scene.lidar.size()).eval();
  out.normalized = true;
  return out;
}

void extract_patch_at(const SceneBundle& scene, int r, int c, int patch,
                      double* out_hsi, double* out_lid) {
  int half = patch / 2;
  int D = scene.D;
  for (int i = 0; i < patch; ++i) {
    int rr = mirror_index(r - half + i, scene.M);
    for (int j = 0; j < patch; ++j) {
      int cc = mirror_index(c - half + j, scene.N);
      const double* src = scene.hsi.data() + ((int64_t)rr * scene.N + cc) * D;
      double* dst = out_hsi + ((int64_t)i * patch + j) * D;
      std::copy(src, src + D, dst);
      out_lid[(int64_t)i * patch + j] = scene.lidar((int64_t)rr * scene.N + cc);
    }
  }
}

std::pair<PatchBatch, PatchBatch> extract_patches(const SceneBundle& scene,
                                                  const SplitSpec& split,
                                                  int patch) {
  if (patch % 2 == 0) throw DataError("patch size must be odd");
  if ((int)split.per_class_train_counts.size() != scene.C)
    throw DataError("split: per-class counts length != C");

  std::vector<std::vector<int64_t>> by_class(scene.C);
  for (int64_t p = 0; p < (int64_t)scene.M * scene.N; ++p) {
    int32_t l = scene.labels[(size_t)p];
    if (l > 0) by_class[l - 1].push_back(p);
  }
  for (int c = 0; c < scene.C; ++c) {
    if (split.per_class_train_counts[c] > (int)by_class[c].size())
      throw DataError("split: class " + std::to_string(c + 1) + " has only " +
                      std::to_string(by_class[c].size()) + " labeled pixels");
    if (by_class[c].empty())
      throw DataError("split: class " + std::to_string(c + 1) +
                      " has zero labeled pixels");
  }

  std::mt19937_64 rng(split.seed);
  std::vector<int64_t> train_px, test_px;
  for (int c = 0; c < scene.C; ++c) {
    std::vector<int64_t> pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    int k = split.per_class_train_counts[c];
    train_px.insert(train_px.end(), pool.begin(), pool.begin() + k);
    if (split.remainder_is_test)
      test_px.insert(test_px.end(), pool.begin() + k, pool.end());
  }

  auto build = [&](const std::vector<int64_t>& px) {
    PatchBatch b;
    b.B = (int)px.size();
    b.m = b.n = patch;
    b.d = scene.D;
    b.x_hsi.resize((int64_t)b.B * patch * patch * scene.D);
    b.x_lid.resize((int64_t)b.B * patch * patch);
    b.y.resize(px.size());
    b.centers.resize(px.size());
    for (size_t i = 0; i < px.size(); ++i) {
      int r = (int)(px[i] / scene.N), c = (int)(px[i] % scene.N);
      b.centers[i] = {r, c};
      b.y[i] = scene.labels[(size_t)px[i]];
      extract_patch_at(scene, r, c, patch,
                       b.x_hsi.data() + (int64_t)i * patch * patch * scene.D,
                       b.x_lid.data() + (int64_t)i * patch * patch);
    }
    return b;
  };
  return {build(train_px), build(test_px)};
}

SceneBundle synth_scene(const SynthConfig& cfg, uint64_t seed) {
  if (cfg.C < 1 || cfg.C > 16) throw DataError("synth: C must be in 1..16");
  if (cfg.M < 4 || cfg.N < 4 || cfg.D < 2) throw DataError("synth: scene too small");

  static const uint8_t kPalette[16][3] = {
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195}};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SceneBundle s;
  s.M = cfg.M;
  s.N = cfg.N;
  s.D = cfg.D;
  s.C = cfg.C;
  for (int c = 0; c < cfg.C; ++c) {
    s.class_names.push_back("class_" + std::to_string(c + 1));
    s.palette.push_back({kPalette[c][0], kPalette[c][1], kPalette[c][2]});
  }
  s.labels.assign((size_t)cfg.M * cfg.N, 0);

  // Voronoi layout: one site per class, retried until every class holds
  // enough pixels.
  bool ok = false;
  for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
    std::vector<std::pair<double, double>> sites(cfg.C);
    for (auto& st : sites) st = {unif(rng) * cfg.M, unif(rng) * cfg.N};
    std::vector<int> counts(cfg.C, 0);
    for (int r = 0; r < cfg.M; ++r)
      for (int c = 0; c < cfg.N; ++c) {
        int best = 0;
        double bd = 1e300;
        for (int k = 0; k < cfg.C; ++k) {
          double dr = r + 0.5 - sites[k].first, dc = c + 0.5 - sites[k].second;
          double d2 = dr * dr + dc * dc;
          if (d2 < bd) {
            bd = d2;
            best = k;
          }
        }
        s.labels[(size_t)r * cfg.N + c] = best + 1;
        ++counts[best];
      }
    ok = *std::min_element(counts.begin(), counts.end()) >=
         cfg.min_pixels_per_class;
  }
  if (!ok)
    throw DataError("synth: could not satisfy the per-class pixel minimum after " +
                    std::to_string(cfg.max_retries) + " attempts");

  // per-class spectral signature (Gaussian bump) and LiDAR base height
  std::vector<Arrayd> sig(cfg.C);
  std::vector<double> height(cfg.C);
  for (int k = 0; k < cfg.C; ++k) {
    double mu = unif(rng) * (cfg.D - 1);
    double width = 1.5 + unif(rng) * (cfg.D / 4.0);
    double amp = 0.5 + unif(rng);
    double base = 0.1 + 0.2 * unif(rng);
    sig[k].resize(cfg.D);
    for (int b = 0; b < cfg.D; ++b)
      sig[k](b) = base + amp * std::exp(-0.5 * (b - mu) * (b - mu) / (width * width));
    height[k] = 2.0 * k + 1.0 + unif(rng);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  s.hsi.resize((int64_t)cfg.M * cfg.N * cfg.D);
  s.lidar.resize((int64_t)cfg.M * cfg.N);
  for (int64_t p = 0; p < (int64_t)cfg.M * cfg.N; ++p) {
    int k = s.labels[(size_t)p] - 1;
    for (int b = 0; b < cfg.D; ++b)
      s.hsi(p * cfg.D + b) = sig[k](b) + cfg.noise * noise(rng);
    s.lidar(p) = height[k] + cfg.noise * noise(rng);
  }
  s.validate();
  return s;
}

}  // namespace specfuse
