#include "specfuse/cli.hpp"

#include "specfuse/checkpoint.hpp"
#include "specfuse/config.hpp"
#include "specfuse/image.hpp"
#include "specfuse/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace specfuse {

namespace {

namespace fs = std::filesystem;

// Relative paths resolve under SPECFUSE_DATA_DIR when it is set.
std::string resolve_path(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  const char* base = std::getenv("SPECFUSE_DATA_DIR");
  if (!base || !*base) return p;
  return (fs::path(base) / p).string();
}

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  bool deterministic = false;
  int jobs = 0;        // 0 = not given
  int64_t seed = -1;   // -1 = not given
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set alpha=0.1")
      ->take_all();
  cmd->add_flag("--deterministic", o.deterministic,
                "seeded serial mode (forces jobs = 1)");
  cmd->add_option("--jobs", o.jobs, "worker thread cap");
  cmd->add_option("--seed", o.seed, "run seed");
}

RunConfig build_config(const CommonOpts& o) {
  KvMap kv;
  if (!o.config_file.empty()) kv = parse_kv_file(resolve_path(o.config_file));
  for (const std::string& s : o.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (o.seed >= 0) kv["seed"] = std::to_string(o.seed);
  if (o.jobs > 0) kv["jobs"] = std::to_string(o.jobs);
  if (o.deterministic) {
    kv["deterministic"] = "true";
    kv["jobs"] = "1";
  }
  return RunConfig::from_map(kv);
}

std::string config_key_help() {
  std::ostringstream os;
  os << "Config keys (defaults in parentheses):\n";
  for (const auto& [k, v] : RunConfig().to_map()) os << "  " << k << " (" << v << ")\n";
  return os.str();
}

SceneBundle load_prepared_scene(const std::string& dir) {
  SceneBundle scene = load_bundle(resolve_path(dir));
  if (!scene.pca_applied || !scene.normalized)
    throw DataError("scene has not been prepared; run 'prepare' first");
  return scene;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(resolve_path(path));
  if (!out) throw DataError("cannot write: " + path);
  out << text;
}

std::vector<int32_t> read_map_file(const std::string& path, int64_t count) {
  std::ifstream in(resolve_path(path), std::ios::binary);
  if (!in) throw DataError("cannot open prediction map: " + path);
  std::vector<int32_t> v((size_t)count);
  in.read(reinterpret_cast<char*>(v.data()), (std::streamsize)(count * 4));
  if (!in || in.peek() != EOF)
    throw DataError("prediction map size does not match the scene: " + path);
  return v;
}

MetricsReport eval_model(FusModel& model, const SceneBundle& scene,
                         std::string& out_text) {
  const RunConfig& cfg = model.config();
  SplitSpec split;
  split.per_class_train_counts.assign((size_t)scene.C, cfg.train_per_class);
  split.seed = cfg.seed;
  auto [train, test] = extract_patches(scene, split, cfg.patch);
  (void)train;
  MetricsReport rep = evaluate_batches(model, test);
  std::vector<int64_t> test_counts((size_t)rep.C, 0);
  for (int c = 0; c < rep.C; ++c)
    for (int p = 0; p < rep.C; ++p) test_counts[(size_t)c] += rep.at(c, p);
  std::vector<int> train_counts((size_t)rep.C, cfg.train_per_class);
  out_text = format_report(rep, scene.class_names, train_counts, test_counts);
  return rep;
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Multimodal (spectral + elevation) patch classifier: diffusion-based "
               "feature fusion with prompt-guided contrastive alignment.\n\n" +
               config_key_help()};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled scene");
  std::string synth_out, synth_size = "64x64";
  SynthConfig scfg;
  uint64_t synth_seed = 42;
  synth->add_option("--out", synth_out, "output bundle directory")->required();
  synth->add_option("--classes", scfg.C, "number of classes (6)");
  synth->add_option("--size", synth_size, "scene size MxN (64x64)");
  synth->add_option("--bands", scfg.D, "spectral band count (32)");
  synth->add_option("--noise", scfg.noise, "observation noise stddev (0.05)");
  synth->add_option("--seed", synth_seed, "generator seed (42)");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "band reduction + min-max normalization");
  std::string prep_scene, prep_out;
  int prep_dim = 15;
  prepare->add_option("--scene", prep_scene, "input bundle directory")->required();
  prepare->add_option("--dim", prep_dim, "retained band count (15)");
  prepare->add_option("--out", prep_out, "output bundle directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train on a prepared scene\n\n" + config_key_help());
  std::string train_scene, train_prompts, train_ckpt, train_log;
  CommonOpts train_opts;
  train->add_option("--scene", train_scene, "prepared bundle directory")->required();
  train->add_option("--prompts", train_prompts, "prompt manifest JSON")->required();
  train->add_option("--out", train_ckpt, "checkpoint output path")->required();
  train->add_option("--log", train_log, "per-step loss log file");
  add_common(train, train_opts);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "held-out evaluation report");
  std::string eval_ckpt, eval_scene, eval_report;
  CommonOpts eval_opts;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--scene", eval_scene, "prepared bundle directory")->required();
  eval_cmd->add_option("--report", eval_report, "report output file");
  add_common(eval_cmd, eval_opts);

  // predict
  auto* predict = app.add_subcommand("predict", "full-scene classification map");
  std::string pred_ckpt, pred_scene, pred_out;
  bool pred_labeled_only = false;
  CommonOpts pred_opts;
  predict->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
  predict->add_option("--scene", pred_scene, "prepared bundle directory")->required();
  predict->add_option("--out", pred_out, "raw int32 map output path")->required();
  predict->add_flag("--labeled-only", pred_labeled_only, "skip unlabeled pixels");
  add_common(predict, pred_opts);

  // map
  auto* map_cmd = app.add_subcommand("map", "render a prediction map as PNG");
  std::string map_pred, map_scene, map_png;
  map_cmd->add_option("--pred", map_pred, "raw int32 map from predict")->required();
  map_cmd->add_option("--scene", map_scene, "bundle directory (dims + palette)")->required();
  map_cmd->add_option("--png", map_png, "PNG output path")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "single-axis ablation sweep\n\n" + config_key_help());
  std::string ab_axis, ab_scene, ab_prompts, ab_report;
  CommonOpts ab_opts;
  ablate->add_option("--axis", ab_axis,
                     "fusion_strategy | loss_terms | lambda_grid | e_grid | "
                     "patch_grid | dim_grid")
      ->required();
  ablate->add_option("--scene", ab_scene, "bundle directory")->required();
  ablate->add_option("--prompts", ab_prompts, "prompt manifest JSON")->required();
  ablate->add_option("--report", ab_report, "report output file");
  add_common(ablate, ab_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (synth->parsed()) {
    int m = 0, n = 0;
    char x = 0;
    std::istringstream ss(synth_size);
    if (!(ss >> m >> x >> n) || x != 'x' || !ss.eof() || m < 1 || n < 1)
      throw ConfigError("--size expects MxN, got '" + synth_size + "'");
    scfg.M = m;
    scfg.N = n;
    SceneBundle scene = synth_scene(scfg, synth_seed);
    save_bundle(scene, resolve_path(synth_out));
    std::cout << "wrote " << scfg.M << "x" << scfg.N << " scene with " << scene.C
              << " classes, " << scene.D << " bands to " << synth_out << "\n";
    return 0;
  }

  if (prepare->parsed()) {
    SceneBundle scene = load_bundle(resolve_path(prep_scene));
    if (scene.pca_applied)
      throw DataError("scene bands are already reduced; refusing to reduce twice");
    PcaResult pca = pca_reduce(scene, prep_dim);
    SceneBundle out = normalize(pca.scene);
    save_bundle(out, resolve_path(prep_out));
    std::cout << "reduced " << scene.D << " bands to " << out.D << "; kept variance ratio:";
    for (double r : pca.explained_variance_ratio) std::cout << " " << r;
    std::cout << "\n";
    return 0;
  }

  if (train->parsed()) {
    RunConfig cfg = build_config(train_opts);
    SceneBundle scene = load_prepared_scene(train_scene);
    if (scene.D != cfg.pca_dim)
      throw ConfigError("pca_dim=" + std::to_string(cfg.pca_dim) +
                        " but the prepared scene has " + std::to_string(scene.D) + " bands");
    PromptManifest manifest = load_manifest(resolve_path(train_prompts));
    if ((int)manifest.classes.size() != scene.C)
      throw DataError("manifest has " + std::to_string(manifest.classes.size()) +
                      " classes but the scene has " + std::to_string(scene.C));

    SplitSpec split;
    split.per_class_train_counts.assign((size_t)scene.C, cfg.train_per_class);
    split.seed = cfg.seed;
    auto [train_patches, test_patches] = extract_patches(scene, split, cfg.patch);
    (void)test_patches;

    FusModel model;
    Rng rng(cfg.seed);
    model.init(cfg, manifest, rng);
    std::cout << "training: " << model.params().count() << " parameters, "
              << train_patches.B << " patches, " << cfg.epochs << " epochs\n";

    std::ofstream log_file;
    std::ostream* log = nullptr;
    if (!train_log.empty()) {
      log_file.open(resolve_path(train_log));
      if (!log_file) throw DataError("cannot write log: " + train_log);
      log = &log_file;
    }
    TrainHistory hist = train_model(model, train_patches, {}, log);
    save_checkpoint(model, resolve_path(train_ckpt));
    const auto& last = hist.steps.back().loss;
    std::cout << "trained " << hist.steps.size() << " steps in " << hist.seconds
              << "s; final total=" << last.total << " (loss_c=" << last.loss_c
              << " loss_n=" << last.loss_n << " loss_m=" << last.loss_m << ")\n";
    std::cout << "checkpoint: " << train_ckpt << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    FusModel model;
    load_checkpoint(model, resolve_path(eval_ckpt));
    SceneBundle scene = load_prepared_scene(eval_scene);
    std::string text;
    eval_model(model, scene, text);
    std::cout << text;
    if (!eval_report.empty()) write_text(eval_report, text);
    return 0;
  }

  if (predict->parsed()) {
    FusModel model;
    load_checkpoint(model, resolve_path(pred_ckpt));
    SceneBundle scene = load_prepared_scene(pred_scene);
    int jobs = pred_opts.deterministic ? 1 : (pred_opts.jobs > 0 ? pred_opts.jobs : 1);
    std::vector<int32_t> map = predict_scene(model, scene, pred_labeled_only, jobs);
    std::ofstream out(resolve_path(pred_out), std::ios::binary);
    if (!out) throw DataError("cannot write map: " + pred_out);
    out.write(reinterpret_cast<const char*>(map.data()),
              (std::streamsize)(map.size() * 4));
    std::cout << "wrote " << scene.M << "x" << scene.N << " map to " << pred_out << "\n";
    return 0;
  }

  if (map_cmd->parsed()) {
    SceneBundle scene = load_bundle(resolve_path(map_scene));
    std::vector<int32_t> pred = read_map_file(map_pred, (int64_t)scene.M * scene.N);
    write_png(resolve_path(map_png), scene.N, scene.M, colorize_labels(pred, scene.palette));
    std::cout << "wrote " << map_png << "\n";
    return 0;
  }

  if (ablate->parsed()) {
    RunConfig cfg = build_config(ab_opts);
    SceneBundle scene = load_bundle(resolve_path(ab_scene));
    PromptManifest manifest = load_manifest(resolve_path(ab_prompts));
    auto rows = run_ablation(ab_axis, cfg, scene, manifest, std::cout);
    std::string text = format_ablation(ab_axis, rows);
    std::cout << text;
    if (!ab_report.empty()) write_text(ab_report, text);
    return 0;
  }

  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace specfuse
