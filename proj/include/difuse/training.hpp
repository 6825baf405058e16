#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "difuse/checkpoint.hpp"
#include "difuse/config.hpp"
#include "difuse/dataset.hpp"
#include "difuse/networks.hpp"
#include "difuse/schedule.hpp"

namespace difuse {

/// A conditional denoiser with the schedule it was trained on.
struct DiffusionModel {
  ComponentKind kind = ComponentKind::kBrightness;
  NoiseSchedule schedule = NoiseSchedule::linear(2, 0.1, 0.1);
  Denoiser net{nullptr};
};

/// eps implied by a clean estimate: (z_t - sqrt(abar) * x0) / sqrt(1 - abar).
torch::Tensor noise_from_x0(const NoiseSchedule& sched, const torch::Tensor& x0,
                            const torch::Tensor& z_t, const torch::Tensor& t);

/// (eps, v) for a fused bundle at latent z_t. With an "x0" denoiser the first
/// head is a clean estimate and eps = (z_t - sqrt(abar) * x0) / sqrt(1 - abar).
std::pair<torch::Tensor, torch::Tensor> predict_noise(DiffusionModel& m, const FeatureBundle& fused,
                                                      const torch::Tensor& z_t,
                                                      const torch::Tensor& t);

/// Periodic progress hook: (step, loss). Also where periodic checkpoints land.
using ProgressFn = std::function<void(int64_t step, double loss)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per optimizer step
  double heldout_before = 0.0;
  double heldout_after = 0.0;
};

Checkpoint to_checkpoint(const DiffusionModel& m, const TrainingConfig& cfg);
DiffusionModel diffusion_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const FusionControl& fcm, const TrainingConfig& cfg);
FusionControl fcm_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const RemodBlock& block, const TrainingConfig& cfg);
RemodBlock remod_from_checkpoint(const Checkpoint& ckpt);

/// Stacks the `index`-th samples into a batch and applies the same random flip
/// and crop to clean and condition. Returns {clean, condition}, each [B, c, h, w].
std::pair<torch::Tensor, torch::Tensor> make_batch(const ComponentDataset& ds,
                                                   const std::vector<size_t>& index,
                                                   const TrainingConfig& cfg, int64_t multiple,
                                                   std::mt19937_64& rng);

/// Hybrid-loss training of one component denoiser. When `checkpoint_dir` is
/// set and cfg.checkpoint_every > 0, writes `<dir>/<component>_step<N>.ckpt`.
TrainResult train_restoration_diffusion(const ComponentDataset& ds, const NoiseSchedule& sched,
                                        const DenoiserSpec& spec, const TrainingConfig& cfg,
                                        const std::optional<std::filesystem::path>& checkpoint_dir = {},
                                        const ProgressFn& progress = {});

/// Held-out hybrid loss with fixed step/noise draws derived from `seed`.
double evaluate_hybrid_loss(DiffusionModel& m, const ComponentDataset& ds, double lambda,
                            uint64_t seed);

/// One fusion training batch: conditions, clean targets and the noisy latent.
struct FusionBatch {
  torch::Tensor xb_cond, y_cond;    // degraded sources, [B, 1, H, W]
  torch::Tensor xb_clean, y_clean;  // clean sources
  torch::Tensor mask;               // [B, 1, H, W], zeros when absent
  torch::Tensor t;                  // [B] int64
  torch::Tensor z_t;                // noisy latent built from a convex mix of the clean sources
};

/// Draws a fusion batch: uniform t over [0, T-1] and z_t = q_sample(mix, t, eps).
FusionBatch make_fusion_batch(const std::vector<FusionSample>& data,
                              const std::vector<size_t>& index, const NoiseSchedule& sched,
                              std::mt19937_64& rng);

/// How the encoder bundles are merged in a fusion forward pass.
struct FusionMode {
  FusionControl* fcm = nullptr;          // learned weights when set
  std::optional<FixedRule> rule;         // otherwise a fixed rule
  RemodBlock* remod = nullptr;           // optional re-modulation
  torch::Tensor mask;                    // [B, 1, H, W], required with remod
};

/// x0_hat from one fusion forward pass, clamped to the configured band.
torch::Tensor fusion_x0_hat(DiffusionModel& m, const FusionBatch& b, const FusionMode& mode,
                            const TrainingConfig& cfg);

/// Trains the FCM with the denoiser frozen.
TrainResult train_fcm(DiffusionModel& brightness, const std::vector<FusionSample>& data,
                      int64_t reduction, const TrainingConfig& cfg,
                      const ProgressFn& progress = {});

/// Mean fcm_loss over `batches` fixed batches drawn from `seed`, for a learned
/// FCM (`fcm` set) or a fixed rule.
double evaluate_fcm_loss(DiffusionModel& brightness, const std::vector<FusionSample>& data,
                         const FusionMode& mode, const TrainingConfig& cfg, int64_t batches,
                         uint64_t seed);

/// Trains the re-modulation block with the denoiser and FCM frozen. Objective:
/// maximize |mean in-mask x0_hat (modulated) - mean out-of-mask x0_hat (base)|
/// minus a penalty on in-mask values leaving [0, 1].
TrainResult train_remod_block(DiffusionModel& brightness, FusionControl& fcm,
                              const std::vector<FusionSample>& data, int64_t hidden,
                              const TrainingConfig& cfg, const ProgressFn& progress = {});

}  // namespace difuse
