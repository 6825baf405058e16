#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "difuse/colorspace.hpp"
#include "difuse/config.hpp"
#include "difuse/degrade.hpp"

namespace difuse {

/// A registered pair: X is color (or gray), Y is gray.
struct ModalPair {
  std::string id;
  Image x;
  Image y;
};

/// Synthetic scene with its object-of-interest mask ([H, W] in {0, 1}).
struct SceneSample {
  ModalPair pair;
  torch::Tensor object_mask;
};

/// Procedural visible/infrared scenes. X carries a tinted background, bright
/// disks and a saturated patch; Y carries a textured square and a hot object
/// that appears dim in X. Deterministic in (seed, index).
SceneSample synthetic_scene(int64_t size, uint64_t seed, int64_t index);

/// Disjoint-content pair: X has a bright disk absent from Y, Y has a textured
/// square absent from X. Returns the pair with disk and square masks.
struct DisjointPair {
  ModalPair pair;
  torch::Tensor disk_mask;
  torch::Tensor square_mask;
};
DisjointPair disjoint_pair(int64_t size, uint64_t seed);

/// One JSON-lines manifest entry {x_path, y_path, mask_path?, split}.
struct ManifestRecord {
  std::filesystem::path x_path;
  std::filesystem::path y_path;
  std::optional<std::filesystem::path> mask_path;
  std::string split = "train";
};

/// Reads a manifest; relative paths resolve against the manifest's directory.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

enum class ComponentKind { kBrightness, kChroma };

std::string to_string(ComponentKind k);
ComponentKind parse_component(const std::string& name);
int64_t latent_channels(ComponentKind k);

/// (clean, degraded) component pair, each [c, H, W].
struct ComponentSample {
  torch::Tensor clean;
  torch::Tensor degraded;
};

struct ComponentDataset {
  ComponentKind kind = ComponentKind::kBrightness;
  std::vector<ComponentSample> samples;
};

/// Draws one degradation per modality image: identity with probability
/// `identity_fraction`, otherwise a spec from a severity picked from `train_mix`.
DegradationSpec draw_training_degradation(const DegradationSection& cfg, std::mt19937_64& rng);

/// Brightness datasets take X's brightness and Y; chroma datasets take X's chroma.
ComponentDataset build_component_dataset(const std::vector<ModalPair>& clean, ComponentKind kind,
                                         const DegradationSection& cfg, uint64_t seed);

/// Brightness-space tensors for FCM / re-modulation training, each [1, H, W].
struct FusionSample {
  torch::Tensor xb_clean;
  torch::Tensor y_clean;
  torch::Tensor xb_degraded;
  torch::Tensor y_degraded;
  torch::Tensor mask;  // undefined when no mask is available
};

std::vector<FusionSample> build_fusion_dataset(const std::vector<ModalPair>& clean,
                                               const std::vector<torch::Tensor>& masks,
                                               const DegradationSection& cfg, uint64_t seed);

/// Loads the pairs (and masks, when present) listed in a manifest for one split.
struct LoadedSplit {
  std::vector<ModalPair> pairs;
  std::vector<torch::Tensor> masks;  // one per pair; undefined when absent
};
LoadedSplit load_split(const std::vector<ManifestRecord>& records, const std::string& split);

/// Generates `count` synthetic scenes starting at `first_index`.
LoadedSplit synthetic_split(int64_t count, int64_t size, uint64_t seed, int64_t first_index = 0);

}  // namespace difuse
