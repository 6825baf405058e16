#include "difuse/training.hpp"

#include <algorithm>
#include <numeric>

#include "difuse/error.hpp"
#include "difuse/losses.hpp"

namespace difuse {

namespace {

torch::Generator make_gen(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

void freeze(torch::nn::Module& m) {
  for (auto& p : m.parameters()) p.set_requires_grad(false);
}

std::vector<size_t> draw_indices(size_t n, int64_t count, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  std::vector<size_t> idx(static_cast<size_t>(count));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

torch::Tensor draw_steps(int64_t batch, int64_t steps, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> pick(0, steps - 1);
  std::vector<int64_t> t(static_cast<size_t>(batch));
  for (auto& v : t) v = pick(rng);
  return torch::tensor(t, torch::kInt64);
}

nlohmann::json base_metadata(const std::string& kind, const TrainingConfig& cfg) {
  return {{"kind", kind}, {"config", to_json(cfg)}};
}

void expect_kind(const Checkpoint& ckpt, const std::string& kind) {
  const auto found = ckpt.metadata.value("kind", std::string());
  if (found != kind) {
    throw FormatError("checkpoint holds '" + found + "', expected '" + kind + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------- checkpoints

Checkpoint to_checkpoint(const DiffusionModel& m, const TrainingConfig& cfg) {
  Checkpoint c;
  c.metadata = base_metadata("diffusion", cfg);
  c.metadata["component"] = to_string(m.kind);
  c.metadata["schedule"] = schedule_to_json(m.schedule);
  c.metadata["spec"] = spec_to_json(m.net->spec());
  export_module(*m.net, "", c);
  return c;
}

DiffusionModel diffusion_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "diffusion");
  DiffusionModel m;
  m.kind = parse_component(ckpt.metadata.at("component").get<std::string>());
  m.schedule = schedule_from_json(ckpt.metadata.at("schedule"));
  m.net = Denoiser(spec_from_json(ckpt.metadata.at("spec")));
  import_module(*m.net, "", ckpt);
  freeze(*m.net);
  return m;
}

Checkpoint to_checkpoint(const FusionControl& fcm, const TrainingConfig& cfg) {
  Checkpoint c;
  c.metadata = base_metadata("fcm", cfg);
  c.metadata["scale_channels"] = fcm->scale_channels();
  c.metadata["reduction"] = fcm->reduction();
  export_module(*fcm, "fcm.", c);
  return c;
}

FusionControl fcm_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "fcm");
  FusionControl fcm(ckpt.metadata.at("scale_channels").get<std::vector<int64_t>>(),
                    ckpt.metadata.at("reduction").get<int64_t>());
  import_module(*fcm, "fcm.", ckpt);
  freeze(*fcm);
  return fcm;
}

Checkpoint to_checkpoint(const RemodBlock& block, const TrainingConfig& cfg) {
  Checkpoint c;
  c.metadata = base_metadata("remod", cfg);
  c.metadata["scale_channels"] = block->scale_channels();
  c.metadata["hidden"] = block->hidden();
  export_module(*block, "remod.", c);
  return c;
}

RemodBlock remod_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "remod");
  RemodBlock block(ckpt.metadata.at("scale_channels").get<std::vector<int64_t>>(),
                   ckpt.metadata.at("hidden").get<int64_t>());
  import_module(*block, "remod.", ckpt);
  freeze(*block);
  return block;
}

torch::Tensor noise_from_x0(const NoiseSchedule& sched, const torch::Tensor& x0,
                            const torch::Tensor& z_t, const torch::Tensor& t) {
  auto ab = sched.gather(sched.alpha_bars(), t, z_t.dim(), z_t.scalar_type());
  return (z_t - ab.sqrt() * x0) / (1.0 - ab).sqrt();
}

std::pair<torch::Tensor, torch::Tensor> predict_noise(DiffusionModel& m, const FeatureBundle& fused,
                                                      const torch::Tensor& z_t,
                                                      const torch::Tensor& t) {
  auto [head, v] = decode(m.net, fused, t);
  if (m.net->spec().prediction == "eps") return {head, v};
  return {noise_from_x0(m.schedule, head, z_t, t), v};
}

// ---------------------------------------------------------------- restoration

std::pair<torch::Tensor, torch::Tensor> make_batch(const ComponentDataset& ds,
                                                   const std::vector<size_t>& index,
                                                   const TrainingConfig& cfg, int64_t multiple,
                                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<torch::Tensor> clean, cond;
  for (auto i : index) {
    auto c = ds.samples.at(i).clean;
    auto d = ds.samples.at(i).degraded;
    if (cfg.random_flip) {
      if (u(rng) < 0.5) c = c.flip({2}), d = d.flip({2});
      if (u(rng) < 0.5) c = c.flip({1}), d = d.flip({1});
    }
    const int64_t h = c.size(1), w = c.size(2);
    if (cfg.random_crop && cfg.crop_size > 0 && cfg.crop_size < std::min(h, w)) {
      std::uniform_int_distribution<int64_t> oy(0, h - cfg.crop_size), ox(0, w - cfg.crop_size);
      const auto y0 = oy(rng), x0 = ox(rng);
      c = c.slice(1, y0, y0 + cfg.crop_size).slice(2, x0, x0 + cfg.crop_size);
      d = d.slice(1, y0, y0 + cfg.crop_size).slice(2, x0, x0 + cfg.crop_size);
    }
    require(c.size(1) % multiple == 0 && c.size(2) % multiple == 0,
            "training images must be divisible by " + std::to_string(multiple));
    clean.push_back(c);
    cond.push_back(d);
  }
  return {torch::stack(clean).contiguous(), torch::stack(cond).contiguous()};
}

namespace {

torch::Tensor restoration_loss(DiffusionModel& m, const torch::Tensor& clean,
                               const torch::Tensor& cond, const torch::Tensor& t,
                               const torch::Tensor& eps, double lambda) {
  auto x_t = q_sample(clean, t, eps, m.schedule);
  auto bundles = encode(m.net, x_t, {cond}, t);
  auto [head, v_pred] = decode(m.net, bundles[0], t);
  if (m.net->spec().prediction == "eps") {
    return hybrid_loss(eps, head, clean, x_t, t, v_pred, m.schedule, lambda);
  }
  // Clean-estimate heads regress x0 directly, which weights every step equally.
  auto eps_pred = noise_from_x0(m.schedule, head, x_t, t);
  auto simple = (head - clean).pow(2).mean({1, 2, 3});
  if (lambda == 0.0) return simple.mean();
  return (simple + lambda * variational_term(eps_pred, clean, x_t, t, v_pred, m.schedule)).mean();
}

ComponentDataset subset(const ComponentDataset& ds, size_t begin, size_t end) {
  ComponentDataset out;
  out.kind = ds.kind;
  out.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     ds.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace

double evaluate_hybrid_loss(DiffusionModel& m, const ComponentDataset& ds, double lambda,
                            uint64_t seed) {
  require(!ds.samples.empty(), "cannot evaluate on an empty dataset");
  torch::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  auto gen = make_gen(seed);
  double total = 0.0;
  size_t count = 0;
  for (size_t begin = 0; begin < ds.samples.size(); begin += 32) {
    const size_t end = std::min(ds.samples.size(), begin + 32);
    std::vector<torch::Tensor> clean, cond;
    for (size_t i = begin; i < end; ++i) {
      clean.push_back(ds.samples[i].clean);
      cond.push_back(ds.samples[i].degraded);
    }
    auto c = torch::stack(clean), d = torch::stack(cond);
    const auto b = c.size(0);
    auto t = draw_steps(b, m.schedule.steps(), rng);
    auto eps = torch::randn(c.sizes(), gen, torch::kFloat32);
    total += restoration_loss(m, c, d, t, eps, lambda).item<double>() * static_cast<double>(b);
    count += static_cast<size_t>(b);
  }
  return total / static_cast<double>(count);
}

TrainResult train_restoration_diffusion(const ComponentDataset& ds, const NoiseSchedule& sched,
                                        const DenoiserSpec& spec, const TrainingConfig& cfg,
                                        const std::optional<std::filesystem::path>& checkpoint_dir,
                                        const ProgressFn& progress) {
  cfg.validate();
  spec.validate();
  if (ds.samples.empty()) throw ValidationError("training dataset is empty");
  const auto expected = latent_channels(ds.kind);
  require(spec.latent_channels == expected,
          "denoiser has " + std::to_string(spec.latent_channels) + " latent channels but " +
              to_string(ds.kind) + " data has " + std::to_string(expected));
  for (const auto& s : ds.samples) {
    require(s.clean.dim() == 3 && s.clean.size(0) == expected && s.clean.sizes() == s.degraded.sizes(),
            "dataset sample does not match its component kind");
  }

  // Hold out a slice for monitoring when there is enough data.
  const size_t n = ds.samples.size();
  const size_t held = n >= 16 ? std::max<size_t>(1, n / 8) : 0;
  auto train = subset(ds, 0, n - held);
  auto heldout = held > 0 ? subset(ds, n - held, n) : train;

  torch::manual_seed(cfg.seed);
  DiffusionModel m{ds.kind, sched, Denoiser(spec)};
  torch::optim::Adam opt(m.net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  std::mt19937_64 rng(cfg.seed);
  auto gen = make_gen(cfg.seed ^ 0x5EEDull);
  const int64_t multiple = int64_t{1} << spec.depth;

  // Exponential moving average of the weights; the checkpoint carries the average.
  DiffusionModel ema{ds.kind, sched, Denoiser(spec)};
  auto sync_ema = [&](double decay) {
    torch::NoGradGuard guard;
    auto src = m.net->parameters();
    auto dst = ema.net->parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i].mul_(decay).add_(src[i], 1.0 - decay);
  };
  sync_ema(0.0);
  auto& out_model = cfg.ema_decay > 0.0 ? ema : m;

  TrainResult result;
  result.heldout_before = evaluate_hybrid_loss(m, heldout, cfg.lambda_vlb, cfg.seed + 1);
  result.losses.reserve(static_cast<size_t>(cfg.steps));
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = draw_indices(train.samples.size(), cfg.batch_size, rng);
    auto [clean, cond] = make_batch(train, idx, cfg, multiple, rng);
    auto t = draw_steps(clean.size(0), sched.steps(), rng);
    auto eps = torch::randn(clean.sizes(), gen, torch::kFloat32);
    auto loss = restoration_loss(m, clean, cond, t, eps, cfg.lambda_vlb);
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (cfg.ema_decay > 0.0) sync_ema(cfg.ema_decay);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw Error("training diverged at step " + std::to_string(step));
    result.losses.push_back(value);
    if (progress) progress(step, value);
    if (checkpoint_dir && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(*checkpoint_dir);
      to_checkpoint(out_model, cfg).save(*checkpoint_dir / (to_string(ds.kind) + "_step" +
                                                    std::to_string(step) + ".ckpt"));
    }
  }
  result.heldout_after = evaluate_hybrid_loss(out_model, heldout, cfg.lambda_vlb, cfg.seed + 1);
  result.checkpoint = to_checkpoint(out_model, cfg);
  result.checkpoint.metadata["losses"] = {{"heldout_before", result.heldout_before},
                                          {"heldout_after", result.heldout_after}};
  return result;
}

// ---------------------------------------------------------------- fusion

FusionBatch make_fusion_batch(const std::vector<FusionSample>& data,
                              const std::vector<size_t>& index, const NoiseSchedule& sched,
                              std::mt19937_64& rng) {
  std::vector<torch::Tensor> xc, yc, xk, yk, mk;
  std::vector<float> mix;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto i : index) {
    const auto& s = data.at(i);
    xc.push_back(s.xb_degraded);
    yc.push_back(s.y_degraded);
    xk.push_back(s.xb_clean);
    yk.push_back(s.y_clean);
    mk.push_back(s.mask.defined() ? s.mask : torch::zeros_like(s.xb_clean));
    mix.push_back(u(rng));
  }
  FusionBatch b;
  b.xb_cond = torch::stack(xc);
  b.y_cond = torch::stack(yc);
  b.xb_clean = torch::stack(xk);
  b.y_clean = torch::stack(yk);
  b.mask = torch::stack(mk);
  const auto batch = b.xb_clean.size(0);
  b.t = draw_steps(batch, sched.steps(), rng);
  auto a = torch::tensor(mix).view({batch, 1, 1, 1});
  auto x0 = a * b.xb_clean + (1.0f - a) * b.y_clean;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> eps(static_cast<size_t>(x0.numel()));
  for (auto& e : eps) e = normal(rng);
  b.z_t = q_sample(x0, b.t, torch::tensor(eps).view(x0.sizes()), sched);
  return b;
}

torch::Tensor fusion_x0_hat(DiffusionModel& m, const FusionBatch& b, const FusionMode& mode,
                            const TrainingConfig& cfg) {
  auto bundles = encode(m.net, b.z_t, {b.xb_cond, b.y_cond}, b.t);
  FeatureBundle fused;
  if (mode.fcm) {
    auto w = fcm_weights(*mode.fcm, bundles[0], bundles[1]);
    fused = mode.remod ? apply_remod(bundles[0], bundles[1], w, remod_coeffs(*mode.remod, mode.mask))
                       : fuse_features(bundles[0], bundles[1], w);
  } else {
    require(mode.rule.has_value(), "fusion needs an FCM or a fixed rule");
    require(mode.remod == nullptr, "re-modulation needs learned fusion weights");
    fused = fuse_features_fixed(bundles[0], bundles[1], *mode.rule);
  }
  auto eps = predict_noise(m, fused, b.z_t, b.t).first;
  return predict_x0(b.z_t, eps, b.t, m.schedule).clamp(cfg.x0_clamp_min, cfg.x0_clamp_max);
}

namespace {

void check_fusion_data(const std::vector<FusionSample>& data) {
  if (data.empty()) throw ValidationError("fusion dataset is empty");
  for (const auto& s : data) {
    require(s.xb_clean.dim() == 3 && s.xb_clean.size(0) == 1 &&
                s.xb_clean.sizes() == s.y_clean.sizes() &&
                s.xb_clean.sizes() == s.xb_degraded.sizes() &&
                s.xb_clean.sizes() == s.y_degraded.sizes(),
            "fusion samples must be registered [1, H, W] brightness maps");
  }
}

void require_brightness(const DiffusionModel& m) {
  require(!m.net.is_empty(), "frozen diffusion checkpoint is missing");
  require(m.kind == ComponentKind::kBrightness, "fusion needs the brightness denoiser");
}

}  // namespace

double evaluate_fcm_loss(DiffusionModel& brightness, const std::vector<FusionSample>& data,
                         const FusionMode& mode, const TrainingConfig& cfg, int64_t batches,
                         uint64_t seed) {
  require_brightness(brightness);
  check_fusion_data(data);
  torch::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int64_t k = 0; k < batches; ++k) {
    const auto idx = draw_indices(data.size(), cfg.batch_size, rng);
    auto b = make_fusion_batch(data, idx, brightness.schedule, rng);
    auto x0 = fusion_x0_hat(brightness, b, mode, cfg);
    total += fcm_loss(x0, b.xb_clean, b.y_clean, cfg.gamma_int, cfg.gamma_grad).item<double>();
  }
  return total / static_cast<double>(batches);
}

TrainResult train_fcm(DiffusionModel& brightness, const std::vector<FusionSample>& data,
                      int64_t reduction, const TrainingConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  require_brightness(brightness);
  check_fusion_data(data);
  freeze(*brightness.net);

  torch::manual_seed(cfg.seed);
  FusionControl fcm(brightness.net->spec().scale_channels(), reduction);
  torch::optim::Adam opt(fcm->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  std::mt19937_64 rng(cfg.seed);
  FusionMode mode;
  mode.fcm = &fcm;

  TrainResult result;
  result.heldout_before = evaluate_fcm_loss(brightness, data, mode, cfg, 4, cfg.seed + 1);
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = draw_indices(data.size(), cfg.batch_size, rng);
    auto b = make_fusion_batch(data, idx, brightness.schedule, rng);
    auto x0 = fusion_x0_hat(brightness, b, mode, cfg);
    auto loss = fcm_loss(x0, b.xb_clean, b.y_clean, cfg.gamma_int, cfg.gamma_grad);
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw Error("FCM training diverged at step " + std::to_string(step));
    result.losses.push_back(value);
    if (progress) progress(step, value);
  }
  result.heldout_after = evaluate_fcm_loss(brightness, data, mode, cfg, 4, cfg.seed + 1);
  freeze(*fcm);
  result.checkpoint = to_checkpoint(fcm, cfg);
  result.checkpoint.metadata["losses"] = {{"before", result.heldout_before},
                                          {"after", result.heldout_after}};
  return result;
}

TrainResult train_remod_block(DiffusionModel& brightness, FusionControl& fcm,
                              const std::vector<FusionSample>& data, int64_t hidden,
                              const TrainingConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  require_brightness(brightness);
  require(!fcm.is_empty(), "frozen FCM checkpoint is missing");
  check_fusion_data(data);
  std::vector<FusionSample> masked;
  for (const auto& s : data) {
    if (s.mask.defined() && s.mask.any().item<bool>()) masked.push_back(s);
  }
  if (masked.empty()) throw ValidationError("every training mask is empty");
  freeze(*brightness.net);
  freeze(*fcm);

  torch::manual_seed(cfg.seed);
  RemodBlock block(fcm->scale_channels(), hidden);
  torch::optim::Adam opt(block->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  std::mt19937_64 rng(cfg.seed);

  auto objective = [&](const FusionBatch& b) {
    torch::Tensor base;
    {
      torch::NoGradGuard guard;
      FusionMode plain;
      plain.fcm = &fcm;
      base = fusion_x0_hat(brightness, b, plain, cfg);
    }
    FusionMode mod;
    mod.fcm = &fcm;
    mod.remod = &block;
    mod.mask = b.mask;
    auto x0 = fusion_x0_hat(brightness, b, mod, cfg);
    auto contrast = masked_contrast(x0, base, b.mask).mean();
    auto out_of_range = (torch::relu(x0 - 1.0).pow(2) + torch::relu(-x0).pow(2)) * b.mask;
    auto penalty = out_of_range.sum() / b.mask.sum().clamp_min(1.0);
    return -contrast + cfg.range_penalty * penalty;
  };
  auto evaluate = [&](uint64_t seed) {
    torch::NoGradGuard guard;
    std::mt19937_64 r(seed);
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      auto b = make_fusion_batch(masked, draw_indices(masked.size(), cfg.batch_size, r),
                                 brightness.schedule, r);
      total += objective(b).item<double>();
    }
    return total / 4.0;
  };

  TrainResult result;
  result.heldout_before = evaluate(cfg.seed + 1);
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = draw_indices(masked.size(), cfg.batch_size, rng);
    auto b = make_fusion_batch(masked, idx, brightness.schedule, rng);
    auto loss = objective(b);
    opt.zero_grad();
    loss.backward();
    opt.step();
    block->project();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw Error("remod training diverged at step " + std::to_string(step));
    result.losses.push_back(value);
    if (progress) progress(step, value);
  }
  result.heldout_after = evaluate(cfg.seed + 1);
  freeze(*block);
  result.checkpoint = to_checkpoint(block, cfg);
  result.checkpoint.metadata["losses"] = {{"before", result.heldout_before},
                                          {"after", result.heldout_after}};
  return result;
}

}  // namespace difuse
