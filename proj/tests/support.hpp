#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

#include "difuse/networks.hpp"
#include "difuse/sampler.hpp"
#include "difuse/schedule.hpp"
#include "difuse/training.hpp"

// c10 logging defines CHECK; the test macros take precedence.
#undef CHECK
#include "doctest.h"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("difuse_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline difuse::DenoiserSpec tiny_spec(int64_t latent = 1, const std::string& prediction = "x0") {
  difuse::DenoiserSpec s;
  s.latent_channels = latent;
  s.base_width = 4;
  s.depth = 2;
  s.time_embed_dim = 8;
  s.prediction = prediction;
  return s;
}

inline difuse::DiffusionModel tiny_model(difuse::ComponentKind kind, uint64_t seed,
                                         int64_t steps = 6) {
  torch::manual_seed(seed);
  difuse::DiffusionModel m;
  m.kind = kind;
  m.schedule = difuse::NoiseSchedule::linear(steps, 0.01, 0.3);
  m.net = difuse::Denoiser(tiny_spec(difuse::latent_channels(kind)));
  for (auto& p : m.net->parameters()) p.set_requires_grad(false);
  return m;
}

/// Untrained but fully populated model set; the remod gates are opened so the
/// mask visibly changes the output.
inline difuse::FusionModels tiny_models(uint64_t seed) {
  difuse::FusionModels m;
  m.brightness = tiny_model(difuse::ComponentKind::kBrightness, seed);
  m.chroma = tiny_model(difuse::ComponentKind::kChroma, seed + 1);
  torch::manual_seed(seed + 2);
  m.fcm = difuse::FusionControl(m.brightness.net->spec().scale_channels(), 2);
  torch::manual_seed(seed + 3);
  m.remod = difuse::RemodBlock(m.brightness.net->spec().scale_channels(), 4);
  {
    torch::NoGradGuard g;
    m.remod->gates().fill_(1.0);
  }
  for (auto& p : m.fcm->parameters()) p.set_requires_grad(false);
  for (auto& p : m.remod->parameters()) p.set_requires_grad(false);
  return m;
}

inline void save_models(difuse::FusionModels& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  difuse::TrainingConfig cfg;
  difuse::to_checkpoint(m.brightness, cfg).save(dir / difuse::kBrightnessCkpt);
  if (m.chroma) difuse::to_checkpoint(*m.chroma, cfg).save(dir / difuse::kChromaCkpt);
  difuse::to_checkpoint(m.fcm, cfg).save(dir / difuse::kFcmCkpt);
  if (!m.remod.is_empty()) difuse::to_checkpoint(m.remod, cfg).save(dir / difuse::kRemodCkpt);
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

}  // namespace testing
