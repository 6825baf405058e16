#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "difuse/degrade.hpp"
#include "difuse/networks.hpp"
#include "difuse/schedule.hpp"
#include "json.hpp"

namespace difuse {

/// Optimization settings shared by the three trainers. Each trainer reads the
/// fields that apply to it.
struct TrainingConfig {
  double learning_rate = 2e-5;
  double lambda_vlb = 1e-3;
  double gamma_int = 1.0;
  double gamma_grad = 0.2;
  int64_t batch_size = 8;
  int64_t steps = 1000;
  bool random_flip = true;
  bool random_crop = true;
  int64_t crop_size = 0;  // 0 keeps the full image
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  double x0_clamp_min = -1.0;
  double x0_clamp_max = 2.0;
  double range_penalty = 10.0;
  double ema_decay = 0.0;  // 0 keeps the raw weights

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);

struct DiffusionSection {
  int64_t T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::string schedule_kind = "linear";
  int64_t base_width = 64;
  int64_t depth = 3;
  int64_t time_embed_dim = 128;
  std::string prediction = "eps";
  TrainingConfig train;

  NoiseSchedule schedule() const;
  DenoiserSpec spec(int64_t latent_channels) const;
};

struct FcmSection {
  int64_t reduction = 4;
  TrainingConfig train;
};

struct RemodSection {
  int64_t hidden = 8;
  TrainingConfig train;
};

struct DegradationSection {
  DegradationRanges ranges;
  std::vector<Severity> train_mix{Severity::kLight, Severity::kMedium, Severity::kHeavy};
  double identity_fraction = 0.2;
};

struct IoSection {
  int64_t image_size = 32;
  int64_t workers = 1;
  double locator_timeout_s = 10.0;
  double vif_noise_variance = 2.0;
  int64_t vif_scales = 4;
};

struct Config {
  DiffusionSection diffusion;
  FcmSection fcm;
  RemodSection remod;
  DegradationSection degradation;
  IoSection io;

  /// Parses `[section]` headers and `key = value` lines. Values are numbers,
  /// booleans, quoted strings, or bracketed lists of those. `#` starts a comment.
  /// Keys not set keep their defaults; unknown sections or keys are rejected.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  std::string to_text() const;
};

}  // namespace difuse
