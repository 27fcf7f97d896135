#include "specfuse/model.hpp"

#include <cmath>

namespace specfuse {

void FusModel::init(const RunConfig& cfg, const PromptManifest& manifest, Rng& rng) {
  cfg.validate();
  validate_manifest(manifest);
  cfg_ = cfg;
  manifest_ = manifest;
  C_ = (int)manifest.classes.size();

  sched_ = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
  vocab_ = build_vocab(manifest.corpus(), cfg.vocab_size);

  prompt_tokens_.clear();
  prompt_tokens_.reserve(4 * C_);
  for (const auto& pc : manifest.classes) prompt_tokens_.push_back(tokenize(pc.self_categorical, vocab_));
  for (int d = 0; d < 3; ++d)
    for (const auto& pc : manifest.classes)
      prompt_tokens_.push_back(tokenize(pc.differentiated[(size_t)d], vocab_));

  DenoiserConfig lcfg;
  lcfg.in_ch_hsi = cfg.pca_dim;
  lcfg.enc_filters = cfg.enc_filters;
  lcfg.dec_filters = cfg.dec_filters;
  lcfg.head_ch = cfg.head_ch;
  lcfg.time_dim = cfg.time_dim;
  lcfg.fusion = parse_fusion_strategy(cfg.fusion_strategy);
  denoiser_.init(ps_, lcfg, rng);

  VisionConfig vcfg;
  vcfg.in_ch = 2 * cfg.head_ch;
  vcfg.patch = cfg.patch;
  vcfg.conv3d_ch = cfg.conv3d_ch;
  vcfg.pooling = parse_head_pooling(cfg.head_pooling);
  vcfg.shared_dim = cfg.shared_dim;
  vcfg.num_classes = C_;
  vision_.init(ps_, vcfg, rng);

  TextEncoderConfig tcfg;
  tcfg.width = cfg.text_width;
  tcfg.layers = cfg.text_layers;
  tcfg.heads = cfg.text_heads;
  tcfg.shared_dim = cfg.shared_dim;
  text_.init(ps_, tcfg, vocab_.vocab_size(), rng);

  refiner_.init(ps_, cfg.refiner_depth, cfg.shared_dim, cfg.refiner_heads, rng);

  if (cfg.learnable_temperature) {
    log_temp_ = ps_.create("align.log_temp", {1});
    log_temp_->val(0) = std::log(cfg.temperature_init);
  } else {
    log_temp_ = nullptr;
  }
}

Var FusModel::temperature() const {
  if (log_temp_) return exp_op(log_temp_);
  return scalar_const(1.0);
}

std::array<Var, 4> FusModel::prompt_embeddings() const {
  Var all = text_.encode(prompt_tokens_);  // [4C, s]
  std::array<Var, 4> out;
  for (int b = 0; b < 4; ++b) out[(size_t)b] = refiner_.refine(slice(all, 0, b * C_, C_));
  return out;
}

StepResult FusModel::training_step(const Arrayd& x_hsi, const Arrayd& x_lid,
                                   int B, int m, int n,
                                   const std::vector<int>& labels_1based,
                                   const std::vector<int>& anchors, int t,
                                   const Array& noise_hsi, const Array& noise_lid,
                                   const LossTermToggle& toggle,
                                   bool update_running) {
  const int d = cfg_.pca_dim;
  if ((int64_t)x_hsi.size() != (int64_t)B * m * n * d)
    throw DataError("training_step: hsi patch size mismatch");
  if ((int64_t)x_lid.size() != (int64_t)B * m * n)
    throw DataError("training_step: lidar patch size mismatch");

  Array xt_h = forward_diffuse(x_hsi, t, noise_hsi, sched_);
  Array xt_l = forward_diffuse(x_lid, t, noise_lid, sched_);
  Var xh = constant({B, m, n, d}, xt_h);
  Var xl = constant({B, m, n, 1}, xt_l);

  std::vector<int> t_vec((size_t)B, t);
  auto out = denoiser_.forward(xh, xl, t_vec, true, update_running);

  Var feats = vision_.extract_features(out.dec.fused);

  std::vector<int> labels0(labels_1based.size());
  for (size_t i = 0; i < labels_1based.size(); ++i) labels0[i] = labels_1based[i] - 1;

  Var l_c = toggle.use_c ? loss_classification(vision_.class_logits(feats), labels0)
                         : scalar_const(0.0);
  Var l_n = toggle.use_n
                ? loss_noise(out.dec.n_hsi_pred, noise_hsi, out.dec.n_lid_pred, noise_lid)
                : scalar_const(0.0);

  Var l_m, l_mc, l_md;
  if (toggle.use_m) {
    Var f_vis = vision_.project(feats);
    auto prompts = prompt_embeddings();
    Var temp = temperature();
    SimilarityLogits sims_c = similarity(prompts[0], f_vis, temp);
    std::array<SimilarityLogits, 3> sims_d{similarity(prompts[1], f_vis, temp),
                                           similarity(prompts[2], f_vis, temp),
                                           similarity(prompts[3], f_vis, temp)};
    auto cons = loss_consistency(sims_c, sims_d, labels0, anchors, cfg_.alpha,
                                 parse_symmetric_ce(cfg_.symmetric_ce));
    l_m = cons.loss_m;
    l_mc = cons.loss_mc;
    l_md = cons.loss_md;
  } else {
    l_m = scalar_const(0.0);
    l_mc = scalar_const(0.0);
    l_md = scalar_const(0.0);
  }

  StepResult res;
  res.total = loss_total(l_c, l_n, l_m, cfg_.lambdas);
  res.values.loss_c = l_c->val(0);
  res.values.loss_n = l_n->val(0);
  res.values.loss_mc = l_mc->val(0);
  res.values.loss_md = l_md->val(0);
  res.values.loss_m = l_m->val(0);
  res.values.total = res.total->val(0);
  res.values.alpha = cfg_.alpha;
  res.values.lambdas = cfg_.lambdas;
  if (!std::isfinite(res.values.total))
    throw NumericError("training loss is not finite");
  return res;
}

Prediction FusModel::predict(const Arrayd& x_hsi, const Arrayd& x_lid, int B,
                             int m, int n) const {
  const int d = cfg_.pca_dim;
  Array zero_h = Array::Zero(x_hsi.size());
  Array zero_l = Array::Zero(x_lid.size());
  Array xt_h = forward_diffuse(x_hsi, cfg_.inference_t, zero_h, sched_);
  Array xt_l = forward_diffuse(x_lid, cfg_.inference_t, zero_l, sched_);
  Var xh = constant({B, m, n, d}, xt_h);
  Var xl = constant({B, m, n, 1}, xt_l);

  std::vector<int> t_vec((size_t)B, cfg_.inference_t);
  auto out = denoiser_.forward(xh, xl, t_vec, false, false);
  Var feats = vision_.extract_features(out.dec.fused);
  Var probs = softmax_lastdim(vision_.class_logits(feats));

  Prediction pred;
  pred.labels.resize((size_t)B);
  pred.confidence.resize((size_t)B);
  for (int b = 0; b < B; ++b) {
    int best = 0;
    double bestp = probs->val(b * C_);
    for (int c = 1; c < C_; ++c) {
      double p = probs->val(b * C_ + c);
      if (p > bestp) {
        bestp = p;
        best = c;
      }
    }
    pred.labels[(size_t)b] = best + 1;
    pred.confidence[(size_t)b] = bestp;
  }
  return pred;
}

}  // namespace specfuse
