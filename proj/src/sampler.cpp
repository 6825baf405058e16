#include "difuse/sampler.hpp"

#include "difuse/error.hpp"

namespace difuse {

namespace {

Checkpoint load_required(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("missing checkpoint: " + path.string());
  return Checkpoint::load(path);
}

torch::Generator make_gen(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor step_tensor(int64_t t, int64_t batch) {
  return torch::full({batch}, t, torch::kInt64);
}

void check_condition(const DiffusionModel& m, const torch::Tensor& c) {
  require(!m.net.is_empty(), "missing checkpoint for the " + to_string(m.kind) + " denoiser");
  require(c.dim() == 4 && c.size(1) == m.net->spec().latent_channels,
          "condition must be [B, " + std::to_string(m.net->spec().latent_channels) + ", H, W]");
}

}  // namespace

FusionModels load_models(const std::filesystem::path& dir) {
  FusionModels m;
  m.brightness = diffusion_from_checkpoint(load_required(dir / kBrightnessCkpt));
  require(m.brightness.kind == ComponentKind::kBrightness, "brightness.ckpt holds a chroma model");
  m.fcm = fcm_from_checkpoint(load_required(dir / kFcmCkpt));
  if (std::filesystem::exists(dir / kChromaCkpt)) {
    m.chroma = diffusion_from_checkpoint(Checkpoint::load(dir / kChromaCkpt));
    require(m.chroma->kind == ComponentKind::kChroma, "chroma.ckpt holds a brightness model");
  }
  if (std::filesystem::exists(dir / kRemodCkpt)) {
    m.remod = remod_from_checkpoint(Checkpoint::load(dir / kRemodCkpt));
  }
  return m;
}

torch::Tensor restore(DiffusionModel& m, const torch::Tensor& condition, uint64_t seed) {
  check_condition(m, condition);
  torch::NoGradGuard guard;
  auto gen = make_gen(seed);
  const auto b = condition.size(0);
  auto z = torch::randn(condition.sizes(), gen, torch::kFloat32);
  for (int64_t t = m.schedule.steps() - 1; t >= 0; --t) {
    auto noise = t > 0 ? torch::randn(z.sizes(), gen, torch::kFloat32) : torch::zeros_like(z);
    auto tt = step_tensor(t, b);
    auto bundles = encode(m.net, z, {condition}, tt);
    auto [eps, v] = predict_noise(m, bundles[0], z, tt);
    z = sample_prev_clipped(z, eps, v, t, m.schedule, noise);
  }
  return z.clamp(0.0, 1.0);
}

ChromaMap restore_chroma(DiffusionModel& chroma, const ChromaMap& degraded, uint64_t seed) {
  require(chroma.kind == ComponentKind::kChroma, "restore_chroma needs the chroma denoiser");
  return {restore(chroma, degraded.values.unsqueeze(0), seed).squeeze(0)};
}

LatentState remodulated_blend(const LatentState& base, const LatentState& mod,
                              const torch::Tensor& mask) {
  require(base.t == mod.t, "blended trajectories must be at the same step");
  require(base.value.sizes() == mod.value.sizes(), "blended trajectories differ in shape");
  auto m = mask.to(base.value.scalar_type());
  while (m.dim() < base.value.dim()) m = m.unsqueeze(0);
  return {base.t, (1.0 - m) * base.value + m * mod.value};
}

torch::Tensor diffuse_fuse(DiffusionModel& brightness, FusionControl& fcm, const torch::Tensor& xb,
                           const torch::Tensor& y, uint64_t seed, const FuseOptions& options) {
  check_condition(brightness, xb);
  require(brightness.kind == ComponentKind::kBrightness, "diffuse_fuse needs the brightness denoiser");
  require(xb.sizes() == y.sizes(), "fusion sources are not registered (sizes differ)");
  require(options.rule.has_value() || !fcm.is_empty(), "missing FCM checkpoint");
  const bool remodulate = options.mask.defined() && options.mask.any().item<bool>();
  if (remodulate) {
    if (options.remod.is_empty()) throw NotFoundError("missing checkpoint: " + std::string(kRemodCkpt));
    require(!options.rule.has_value(), "re-modulation needs learned fusion weights");
    require(options.mask.dim() == 4 && options.mask.size(0) == xb.size(0) &&
                options.mask.size(1) == 1 && options.mask.size(2) == xb.size(2) &&
                options.mask.size(3) == xb.size(3),
            "mask must be [B, 1, H, W] and match the sources");
  }

  torch::NoGradGuard guard;
  auto& net = brightness.net;
  const auto& sched = brightness.schedule;
  const auto b = xb.size(0);
  ModulationCoeffs kappa;
  if (remodulate) {
    auto block = options.remod;
    kappa = remod_coeffs(block, options.mask);
  }

  auto step_model = [&](const torch::Tensor& z, const torch::Tensor& tt, bool modulated) {
    auto bundles = encode(net, z, {xb, y}, tt);
    if (options.rule) {
      return predict_noise(brightness, fuse_features_fixed(bundles[0], bundles[1], *options.rule), z, tt);
    }
    auto w = fcm_weights(fcm, bundles[0], bundles[1]);
    auto fused = modulated ? apply_remod(bundles[0], bundles[1], w, kappa)
                           : fuse_features(bundles[0], bundles[1], w);
    return predict_noise(brightness, fused, z, tt);
  };

  auto gen = make_gen(seed);
  LatentState base(sched.steps() - 1, torch::randn(xb.sizes(), gen, torch::kFloat32));
  LatentState blend = base;
  for (int64_t t = sched.steps() - 1; t >= 0; --t) {
    auto noise = t > 0 ? torch::randn(xb.sizes(), gen, torch::kFloat32) : torch::zeros_like(xb);
    auto tt = step_tensor(t, b);
    auto [eps, v] = step_model(base.value, tt, false);
    LatentState next_base(std::max<int64_t>(t - 1, 0), sample_prev_clipped(base.value, eps, v, t, sched, noise));
    if (remodulate) {
      auto [eps_m, v_m] = step_model(blend.value, tt, true);
      LatentState next_mod(next_base.t, sample_prev_clipped(blend.value, eps_m, v_m, t, sched, noise));
      blend = remodulated_blend(next_base, next_mod, options.mask);
    } else {
      blend = next_base;
    }
    base = next_base;
  }
  return blend.value.clamp(0.0, 1.0);
}

Image fuse_full(FusionModels& models, const FusionRun& run) {
  const auto& x = run.pair.x;
  const auto& y = run.pair.y;
  require(!x.empty() && !y.empty(), "fusion needs both sources");
  require(y.channels() == 1, "Y must be a single-channel image");
  if (x.height() != y.height() || x.width() != y.width()) {
    throw ValidationError("fusion sources are not registered: X is " + std::to_string(x.height()) +
                          "x" + std::to_string(x.width()) + ", Y is " + std::to_string(y.height()) +
                          "x" + std::to_string(y.width()));
  }
  FuseOptions options;
  if (run.mask && run.mask->any()) {
    require(run.mask->height() == x.height() && run.mask->width() == x.width(),
            "mask does not match the sources");
    options.mask = run.mask->values.view({1, 1, x.height(), x.width()});
    options.remod = models.remod;
    if (options.remod.is_empty()) throw NotFoundError("missing checkpoint: " + std::string(kRemodCkpt));
  }
  auto xb = brightness_of(x).values.unsqueeze(0);
  auto yb = y.values().unsqueeze(0);
  auto fused_b = diffuse_fuse(models.brightness, models.fcm, xb, yb, run.seed, options).squeeze(0);
  if (!x.is_color()) return Image(fused_b.expand({3, x.height(), x.width()}).contiguous());
  if (!models.chroma) throw NotFoundError("missing checkpoint: " + std::string(kChromaCkpt));
  auto chroma = restore_chroma(*models.chroma, split(x).second, run.chroma_seed);
  return merge({fused_b}, chroma);
}

Image fuse_full(FusionModels& models, FusionRun run, const std::string& text,
                const LocatorProvider& provider) {
  run.mask = locate(run.pair.x, run.pair.id, text, provider);
  return fuse_full(models, run);
}

}  // namespace difuse
