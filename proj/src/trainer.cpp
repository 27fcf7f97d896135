#include "specfuse/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

namespace specfuse {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// patch index list per class, 0-based into batch arrays
std::vector<std::vector<int>> group_by_class(const PatchBatch& b, int C) {
  std::vector<std::vector<int>> groups((size_t)C);
  for (int i = 0; i < b.B; ++i) {
    int y = b.y[(size_t)i];
    if (y < 1 || y > C) throw DataError("train patch label out of range");
    groups[(size_t)y - 1].push_back(i);
  }
  for (int c = 0; c < C; ++c)
    if (groups[(size_t)c].empty())
      throw DataError("class " + std::to_string(c + 1) + " has no training patches");
  return groups;
}

void copy_patch(const PatchBatch& src, int i, int feat, double* dst) {
  const int64_t n = (int64_t)src.m * src.n * feat;
  const double* base =
      (feat == 1 ? src.x_lid.data() : src.x_hsi.data()) + (int64_t)i * n;
  std::copy(base, base + n, dst);
}

}  // namespace

TrainHistory train_model(FusModel& model, const PatchBatch& train,
                         const LossTermToggle& toggle, std::ostream* log) {
  const RunConfig& cfg = model.config();
  const int C = model.num_classes();
  const int k = cfg.samples_per_class;
  const int m = train.m, n = train.n, d = train.d;
  if (d != cfg.pca_dim) throw DataError("patch band count does not match pca_dim");

  auto groups = group_by_class(train, C);
  for (const auto& g : groups)
    if ((int)g.size() < k)
      throw DataError("samples_per_class exceeds available patches for a class");

  const int steps_per_epoch = std::max<int>(1, (int)(groups[0].size() / (size_t)k));
  const int B = C * k;

  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> t_draw(1, cfg.diffusion_steps);

  Adam opt;
  opt.lr = cfg.learning_rate;

  Arrayd xh(B * m * n * d), xl(B * m * n);
  std::vector<int> labels((size_t)B), anchors((size_t)C);

  TrainHistory hist;
  auto t0 = Clock::now();
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
    for (int s = 0; s < steps_per_epoch; ++s) {
      int b = 0;
      for (int c = 0; c < C; ++c) {
        anchors[(size_t)c] = b;
        for (int j = 0; j < k; ++j, ++b) {
          int idx = groups[(size_t)c][(size_t)(s * k + j) % groups[(size_t)c].size()];
          copy_patch(train, idx, d, xh.data() + (int64_t)b * m * n * d);
          copy_patch(train, idx, 1, xl.data() + (int64_t)b * m * n);
          labels[(size_t)b] = c + 1;
        }
      }
      int t = t_draw(rng);
      Array nh(B * m * n * d), nl(B * m * n);
      for (int64_t i = 0; i < nh.size(); ++i) nh(i) = gauss(rng);
      for (int64_t i = 0; i < nl.size(); ++i) nl(i) = gauss(rng);

      model.params().zero_grads();
      StepResult res = model.training_step(xh, xl, B, m, n, labels, anchors, t,
                                           nh, nl, toggle, true);
      backward(res.total);
      opt.step(model.params());

      StepRecord rec;
      rec.step = step++;
      rec.epoch = epoch;
      rec.t = t;
      rec.loss = res.values;
      hist.steps.push_back(rec);
      if (log) {
        (*log) << "step=" << rec.step << " epoch=" << epoch << " t=" << t
               << std::setprecision(6) << " loss_c=" << res.values.loss_c
               << " loss_n=" << res.values.loss_n << " loss_mc=" << res.values.loss_mc
               << " loss_md=" << res.values.loss_md << " loss_m=" << res.values.loss_m
               << " total=" << res.values.total << "\n";
      }
    }
  }
  hist.seconds = seconds_since(t0);
  return hist;
}

std::vector<int32_t> predict_batches(const FusModel& model, const PatchBatch& data) {
  const RunConfig& cfg = model.config();
  const int m = data.m, n = data.n, d = data.d;
  std::vector<int32_t> out((size_t)data.B, 0);
  for (int start = 0; start < data.B; start += cfg.eval_batch) {
    int B = std::min(cfg.eval_batch, data.B - start);
    Arrayd xh(B * m * n * d), xl(B * m * n);
    for (int i = 0; i < B; ++i) {
      copy_patch(data, start + i, d, xh.data() + (int64_t)i * m * n * d);
      copy_patch(data, start + i, 1, xl.data() + (int64_t)i * m * n);
    }
    Prediction p = model.predict(xh, xl, B, m, n);
    for (int i = 0; i < B; ++i) out[(size_t)(start + i)] = p.labels[(size_t)i];
  }
  return out;
}

MetricsReport evaluate_batches(const FusModel& model, const PatchBatch& data) {
  auto t0 = Clock::now();
  std::vector<int32_t> pred = predict_batches(model, data);
  std::vector<int32_t> truth(data.y.begin(), data.y.end());
  MetricsReport rep = evaluate(pred, truth, model.num_classes());
  rep.test_seconds = seconds_since(t0);
  return rep;
}

std::vector<int32_t> predict_scene(const FusModel& model, const SceneBundle& scene,
                                   bool labeled_only, int jobs) {
  const RunConfig& cfg = model.config();
  if (scene.D != cfg.pca_dim)
    throw DataError("scene band count does not match the model's pca_dim; run prepare first");
  const int patch = cfg.patch;
  const int m = patch, n = patch;

  std::vector<std::pair<int, int>> centers;
  centers.reserve((size_t)scene.M * scene.N);
  for (int r = 0; r < scene.M; ++r)
    for (int c = 0; c < scene.N; ++c)
      if (!labeled_only || scene.labels[(size_t)r * scene.N + c] != 0)
        centers.push_back({r, c});

  std::vector<int32_t> map((size_t)scene.M * scene.N, 0);
  const int64_t total = (int64_t)centers.size();
  const int64_t chunk = cfg.eval_batch;

  auto work = [&](int64_t begin, int64_t end) {
    for (int64_t start = begin; start < end; start += chunk) {
      int B = (int)std::min<int64_t>(chunk, end - start);
      Arrayd xh((int64_t)B * m * n * scene.D), xl((int64_t)B * m * n);
      for (int i = 0; i < B; ++i) {
        auto [r, c] = centers[(size_t)(start + i)];
        extract_patch_at(scene, r, c, patch, xh.data() + (int64_t)i * m * n * scene.D,
                         xl.data() + (int64_t)i * m * n);
      }
      Prediction p = model.predict(xh, xl, B, m, n);
      for (int i = 0; i < B; ++i) {
        auto [r, c] = centers[(size_t)(start + i)];
        map[(size_t)r * scene.N + c] = p.labels[(size_t)i];
      }
    }
  };

  int workers = std::max(1, jobs);
  if (workers == 1 || total <= chunk) {
    work(0, total);
  } else {
    // chunk-aligned split so results are independent of worker count
    int64_t chunks = (total + chunk - 1) / chunk;
    int64_t per = (chunks + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      int64_t begin = std::min(total, w * per * chunk);
      int64_t end = std::min(total, (w + 1) * per * chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return map;
}

namespace {

AblationRow run_one(const RunConfig& cfg, const LossTermToggle& toggle,
                    const std::string& setting, const SceneBundle& prepared,
                    const PromptManifest& manifest, std::ostream& log) {
  SplitSpec split;
  split.per_class_train_counts.assign((size_t)prepared.C, cfg.train_per_class);
  split.seed = cfg.seed;
  auto [train, test] = extract_patches(prepared, split, cfg.patch);

  FusModel model;
  Rng rng(cfg.seed);
  model.init(cfg, manifest, rng);
  TrainHistory hist = train_model(model, train, toggle, nullptr);
  MetricsReport rep = evaluate_batches(model, test);

  AblationRow row;
  row.setting = setting;
  row.oa = rep.oa;
  row.aa = rep.aa;
  row.kappa = rep.kappa;
  row.train_seconds = hist.seconds;
  row.param_count = model.params().count();
  log << "ablate " << setting << ": oa=" << row.oa << " aa=" << row.aa
      << " kappa=" << row.kappa << " train_s=" << row.train_seconds
      << " params=" << row.param_count << "\n";
  return row;
}

SceneBundle prepare_if_needed(const SceneBundle& scene, int d) {
  SceneBundle s = scene.pca_applied ? scene : pca_reduce(scene, d).scene;
  if (!s.normalized) s = normalize(s);
  return s;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::string& axis, const RunConfig& base,
                                      const SceneBundle& scene,
                                      const PromptManifest& manifest,
                                      std::ostream& log) {
  std::vector<AblationRow> rows;
  if (axis == "fusion_strategy") {
    SceneBundle prepared = prepare_if_needed(scene, base.pca_dim);
    for (const char* name :
         {"none", "sum", "concat", "weighted_sum", "weighted_concat", "adaptive"}) {
      RunConfig cfg = base;
      cfg.fusion_strategy = name;
      rows.push_back(run_one(cfg, {}, name, prepared, manifest, log));
    }
  } else if (axis == "loss_terms") {
    SceneBundle prepared = prepare_if_needed(scene, base.pca_dim);
    struct Case {
      const char* name;
      LossTermToggle t;
    };
    for (const Case& cs : {Case{"C", {true, false, false}},
                           Case{"C+N", {true, true, false}},
                           Case{"C+M", {true, false, true}},
                           Case{"C+N+M", {true, true, true}}})
      rows.push_back(run_one(base, cs.t, cs.name, prepared, manifest, log));
  } else if (axis == "lambda_grid") {
    SceneBundle prepared = prepare_if_needed(scene, base.pca_dim);
    const std::array<double, 3> grid[] = {
        {0.2, 0.4, 0.4}, {0.4, 0.3, 0.3}, {0.6, 0.2, 0.2}, {0.8, 0.1, 0.1}};
    for (const auto& l : grid) {
      RunConfig cfg = base;
      cfg.lambdas = l;
      std::ostringstream name;
      name << "(" << l[0] << "," << l[1] << "," << l[2] << ")";
      rows.push_back(run_one(cfg, {}, name.str(), prepared, manifest, log));
    }
  } else if (axis == "e_grid") {
    SceneBundle prepared = prepare_if_needed(scene, base.pca_dim);
    for (int e = 1; e <= 5; ++e) {
      RunConfig cfg = base;
      cfg.refiner_depth = e;
      rows.push_back(run_one(cfg, {}, "e=" + std::to_string(e), prepared, manifest, log));
    }
  } else if (axis == "patch_grid") {
    SceneBundle prepared = prepare_if_needed(scene, base.pca_dim);
    for (int p : {9, 13, 17, 21, 25}) {
      RunConfig cfg = base;
      cfg.patch = p;
      rows.push_back(
          run_one(cfg, {}, "patch=" + std::to_string(p), prepared, manifest, log));
    }
  } else if (axis == "dim_grid") {
    if (scene.pca_applied)
      throw ConfigError("dim_grid ablation needs a raw scene (before band reduction)");
    for (int d : {5, 10, 15, 20, 25}) {
      if (d > scene.D) continue;
      RunConfig cfg = base;
      cfg.pca_dim = d;
      SceneBundle prepared = prepare_if_needed(scene, d);
      rows.push_back(run_one(cfg, {}, "d=" + std::to_string(d), prepared, manifest, log));
    }
    if (rows.empty()) throw ConfigError("dim_grid: scene has fewer bands than every grid value");
  } else {
    throw ConfigError("unknown ablation axis: " + axis);
  }
  return rows;
}

std::string format_ablation(const std::string& axis, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "ablation axis: " << axis << "\n";
  os << std::left << std::setw(20) << "setting" << std::right << std::setw(10) << "OA(%)"
     << std::setw(10) << "AA(%)" << std::setw(10) << "Kappa" << std::setw(12) << "train(s)"
     << std::setw(12) << "params" << "\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << r.setting << std::right << std::setprecision(2)
       << std::setw(10) << 100.0 * r.oa << std::setw(10) << 100.0 * r.aa
       << std::setprecision(4) << std::setw(10) << r.kappa << std::setprecision(1)
       << std::setw(12) << r.train_seconds << std::setw(12) << r.param_count << "\n";
  }
  return os.str();
}

}  // namespace specfuse
