#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>

#include "difuse/colorspace.hpp"
#include "difuse/dataset.hpp"
#include "difuse/locate.hpp"
#include "difuse/training.hpp"

namespace difuse {

/// Everything a fusion run may need. `chroma` and `remod` are optional.
struct FusionModels {
  DiffusionModel brightness;
  std::optional<DiffusionModel> chroma;
  FusionControl fcm{nullptr};
  RemodBlock remod{nullptr};
};

/// Checkpoint file names inside a checkpoint directory.
inline constexpr const char* kBrightnessCkpt = "brightness.ckpt";
inline constexpr const char* kChromaCkpt = "chroma.ckpt";
inline constexpr const char* kFcmCkpt = "fcm.ckpt";
inline constexpr const char* kRemodCkpt = "remod.ckpt";

/// Loads the models present under `dir`. Brightness and FCM are mandatory;
/// chroma and remod are loaded when their files exist. Missing mandatory files
/// raise NotFoundError.
FusionModels load_models(const std::filesystem::path& dir);

/// Full reverse sampling of one component conditioned on `condition`
/// ([B, c, H, W]). Z_T and every z come from one generator seeded by `seed`.
/// Returns Z_0 clamped to [0, 1].
torch::Tensor restore(DiffusionModel& m, const torch::Tensor& condition, uint64_t seed);

ChromaMap restore_chroma(DiffusionModel& chroma, const ChromaMap& degraded, uint64_t seed);

/// (1 - M) * base + M * mod at the shared step.
LatentState remodulated_blend(const LatentState& base, const LatentState& mod,
                              const torch::Tensor& mask);

/// How the brightness trajectory merges the two conditions.
struct FuseOptions {
  std::optional<FixedRule> rule;  // replaces the FCM when set
  RemodBlock remod{nullptr};      // used with a non-empty mask
  torch::Tensor mask;             // [B, 1, H, W]; undefined or all-zero means no re-modulation
};

/// Diffusion fusion of brightness conditions xb and y ([B, 1, H, W]). With a
/// non-empty mask, runs the base and modulated trajectories side by side under
/// shared noise and blends them at every step. Returns Z_0 clamped to [0, 1].
torch::Tensor diffuse_fuse(DiffusionModel& brightness, FusionControl& fcm, const torch::Tensor& xb,
                           const torch::Tensor& y, uint64_t seed, const FuseOptions& options = {});

struct FusionRun {
  ModalPair pair;
  uint64_t seed = 0;         // brightness trajectory
  uint64_t chroma_seed = 1;  // chroma trajectory
  std::optional<Mask> mask;  // resolved object mask, if any
};

/// Z^b from diffuse_fuse (re-modulated with a non-empty mask), Z^c from
/// restore_chroma, stitched with merge. A gray X yields the fused brightness
/// replicated to three channels.
Image fuse_full(FusionModels& models, const FusionRun& run);

/// Resolves `text` through `provider` into run.mask, then runs fuse_full.
Image fuse_full(FusionModels& models, FusionRun run, const std::string& text,
                const LocatorProvider& provider);

}  // namespace difuse
