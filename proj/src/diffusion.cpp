#include "specfuse/diffusion.hpp"

#include <cmath>

namespace specfuse {

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.beta.resize((size_t)T);
  s.alpha_bar.resize((size_t)T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.beta[(size_t)i] =
        T == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * i / (double)(T - 1);
    prod *= 1.0 - s.beta[(size_t)i];
    s.alpha_bar[(size_t)i] = prod;
  }
  return s;
}

Array forward_diffuse(const Array& x0, int t, const Array& noise,
                      const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.T())
    throw ConfigError("forward_diffuse: t out of range 1..T");
  if (noise.size() != x0.size())
    throw DataError("forward_diffuse: noise shape mismatch");
  double ab = sched.alpha_bar[(size_t)(t - 1)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

FusionStrategy parse_fusion_strategy(const std::string& name) {
  if (name == "none") return FusionStrategy::kNone;
  if (name == "sum") return FusionStrategy::kSum;
  if (name == "concat") return FusionStrategy::kConcat;
  if (name == "weighted_sum") return FusionStrategy::kWeightedSum;
  if (name == "weighted_concat") return FusionStrategy::kWeightedConcat;
  if (name == "adaptive") return FusionStrategy::kAdaptive;
  throw ConfigError("unknown fusion_strategy: " + name);
}

std::string fusion_strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kNone: return "none";
    case FusionStrategy::kSum: return "sum";
    case FusionStrategy::kConcat: return "concat";
    case FusionStrategy::kWeightedSum: return "weighted_sum";
    case FusionStrategy::kWeightedConcat: return "weighted_concat";
    case FusionStrategy::kAdaptive: return "adaptive";
  }
  return "?";
}

// ---------------- residual block ----------------

void ResBlock2d::init(ParamStore& ps, const std::string& name, int cin, int cout,
                      Rng& rng) {
  conv1.init(ps, name + ".conv1", 3, cin, cout, rng);
  conv2.init(ps, name + ".conv2", 3, cout, cout, rng);
  bn1.init(ps, name + ".bn1", cout);
  bn2.init(ps, name + ".bn2", cout);
  has_proj = cin != cout;
  if (has_proj) proj.init(ps, name + ".proj", 1, cin, cout, rng);
}

Var ResBlock2d::operator()(const Var& x, bool training, bool update_running) const {
  Var h = relu(bn1(conv1(x), training, update_running));
  h = relu(bn2(conv2(h), training, update_running));
  Var skip = has_proj ? proj(x) : x;
  return add(h, skip);
}

// ---------------- encoder ----------------

void BranchEncoder::init(ParamStore& ps, const std::string& name, int cin,
                         const DenoiserConfig& cfg, Rng& rng) {
  const auto& f = cfg.enc_filters;
  blocks_.resize(f.size());
  blocks_[0].init(ps, name + ".block0", cin, f[0], rng);
  for (size_t u = 1; u < f.size(); ++u)
    blocks_[u].init(ps, name + ".block" + std::to_string(u), f[u], f[u], rng);
  down_proj_.resize(f.size() - 1);
  time_proj_.resize(f.size() - 1);
  for (size_t u = 0; u + 1 < f.size(); ++u) {
    down_proj_[u].init(ps, name + ".down" + std::to_string(u) + ".proj", 1, f[u],
                       f[u + 1], rng);
    time_proj_[u].init(ps, name + ".down" + std::to_string(u) + ".time",
                       cfg.time_dim, f[u + 1], rng);
  }
}

EncoderTrace BranchEncoder::encode(const Var& x, const Var& temb, bool training,
                                   bool update_running) const {
  if (x->shape[1] < 4 || x->shape[2] < 4)
    throw DataError("encoder: spatial dims must be >= 4");
  EncoderTrace tr;
  Var h = x;
  for (size_t u = 0; u < blocks_.size(); ++u) {
    h = blocks_[u](h, training, update_running);
    if (u + 1 < blocks_.size()) {
      tr.skips.push_back(h);
      h = down_proj_[u](maxpool2d(h));
      h = add_channel_bc(h, time_proj_[u](temb));
    }
  }
  tr.bottleneck = h;
  return tr;
}

// ---------------- fusion ----------------

void AdaptiveFusion::init(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng) {
  strategy_ = cfg.fusion;
  int f2 = cfg.enc_filters.back();
  has_mask_ = strategy_ == FusionStrategy::kWeightedSum ||
              strategy_ == FusionStrategy::kWeightedConcat ||
              strategy_ == FusionStrategy::kAdaptive;
  if (has_mask_) mask_conv_.init(ps, "adaptive.mask", 3, 2 * f2, 2, rng);
  int fuse_in;
  switch (strategy_) {
    case FusionStrategy::kNone:
    case FusionStrategy::kSum:
    case FusionStrategy::kWeightedSum:
      fuse_in = f2;
      break;
    default:
      fuse_in = 2 * f2;
  }
  fuse_conv_.init(ps, "adaptive.fuse", 3, fuse_in, cfg.fused_ch(), rng);
}

namespace {
// broadcast a single-channel mask over a C-channel map
Var mask_mul(const Var& x, const Var& mask) {
  int B = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
  Var m = mask;
  if (C > 1) {
    std::vector<Var> reps((size_t)C, mask);
    m = concat(reps, 3);
  }
  (void)B;
  (void)H;
  (void)W;
  return mul(x, m);
}
}  // namespace

FusionOutputs AdaptiveFusion::fuse(const Var& x_hsi, const Var& x_lid) const {
  if (x_hsi->shape != x_lid->shape)
    throw DataError("fusion: branch shape mismatch");
  FusionOutputs out;
  if (has_mask_) {
    Var logits = mask_conv_(concat({x_hsi, x_lid}, 3));
    Var masks = softmax_lastdim(logits);  // [B,h,w,2]
    out.mask_hsi = slice(masks, 3, 0, 1);
    out.mask_lid = slice(masks, 3, 1, 1);
  }
  switch (strategy_) {
    case FusionStrategy::kNone:
      out.fused = fuse_conv_(x_hsi);
      break;
    case FusionStrategy::kSum:
      out.fused = fuse_conv_(add(x_hsi, x_lid));
      break;
    case FusionStrategy::kConcat:
      out.fused = fuse_conv_(concat({x_hsi, x_lid}, 3));
      break;
    case FusionStrategy::kWeightedSum:
      out.fused = fuse_conv_(
          add(mask_mul(x_hsi, out.mask_hsi), mask_mul(x_lid, out.mask_lid)));
      break;
    case FusionStrategy::kWeightedConcat:
    case FusionStrategy::kAdaptive:
      out.fused = fuse_conv_(
          concat({mask_mul(x_hsi, out.mask_hsi), mask_mul(x_lid, out.mask_lid)}, 3));
      break;
  }
  return out;
}

// ---------------- decoder ----------------

void BranchDecoder::init(ParamStore& ps, const std::string& name,
                         const DenoiserConfig& cfg, int noise_ch, Rng& rng) {
  const auto& g = cfg.dec_filters;
  const auto& f = cfg.enc_filters;
  split_.init(ps, name + ".split", 1, cfg.fused_ch(), g[0], rng);
  blocks_.resize(g.size());
  for (size_t v = 0; v < g.size(); ++v)
    blocks_[v].init(ps, name + ".block" + std::to_string(v), g[v], g[v], rng);
  merge_.resize(g.size() - 1);
  time_proj_.resize(g.size() - 1);
  for (size_t v = 0; v + 1 < g.size(); ++v) {
    int skip_ch = f[f.size() - 2 - v];  // symmetric encoder level
    merge_[v].init(ps, name + ".up" + std::to_string(v) + ".merge", 3,
                   g[v] + skip_ch, g[v + 1], rng);
    time_proj_[v].init(ps, name + ".up" + std::to_string(v) + ".time",
                       cfg.time_dim, g[v + 1], rng);
  }
  head_.init(ps, name + ".head", 1, g.back(), cfg.head_ch, rng);
  noise_head_.init(ps, name + ".noise", 1, g.back(), noise_ch, rng);
}

BranchDecoder::Out BranchDecoder::decode(const Var& fused,
                                         const EncoderTrace& trace,
                                         const Var& temb, bool training,
                                         bool update_running) const {
  Var h = split_(fused);
  for (size_t v = 0; v < blocks_.size(); ++v) {
    h = blocks_[v](h, training, update_running);
    if (v + 1 < blocks_.size()) {
      const Var& skip = trace.skips[trace.skips.size() - 1 - v];
      h = resize_bilinear(h, skip->shape[1], skip->shape[2]);
      h = merge_[v](concat({skip, h}, 3));
      h = add_channel_bc(h, time_proj_[v](temb));
    }
  }
  Out out;
  out.feat = h;
  out.head = head_(h);
  out.noise = noise_head_(h);
  return out;
}

// ---------------- FusionDenoiser ----------------

void FusionDenoiser::init(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng) {
  cfg_ = cfg;
  enc_hsi_.init(ps, "denoiser.enc_hsi", cfg.in_ch_hsi, cfg, rng);
  enc_lid_.init(ps, "denoiser.enc_lid", 1, cfg, rng);
  fusion_.init(ps, cfg, rng);
  dec_hsi_.init(ps, "denoiser.dec_hsi", cfg, cfg.in_ch_hsi, rng);
  dec_lid_.init(ps, "denoiser.dec_lid", cfg, 1, rng);
}

FusionDenoiser::Out FusionDenoiser::forward(const Var& x_hsi_noisy, const Var& x_lid_noisy,
                        const std::vector<int>& t, bool training,
                        bool update_running) const {
  Var temb = timestep_features(t, cfg_.time_dim);
  Out out;
  out.enc_hsi = enc_hsi_.encode(x_hsi_noisy, temb, training, update_running);
  out.enc_lid = enc_lid_.encode(x_lid_noisy, temb, training, update_running);
  out.fusion = fusion_.fuse(out.enc_hsi.bottleneck, out.enc_lid.bottleneck);
  auto dh = dec_hsi_.decode(out.fusion.fused, out.enc_hsi, temb, training,
                            update_running);
  auto dl = dec_lid_.decode(out.fusion.fused, out.enc_lid, temb, training,
                            update_running);
  out.dec.x_hsi_dec = dh.feat;
  out.dec.x_lid_dec = dl.feat;
  out.dec.n_hsi_pred = dh.noise;
  out.dec.n_lid_pred = dl.noise;
  out.dec.fused = concat({dh.head, dl.head}, 3);
  return out;
}

}  // namespace specfuse
