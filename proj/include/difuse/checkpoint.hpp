#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace difuse {

class NoiseSchedule;
struct DenoiserSpec;

/// Named tensors plus a JSON metadata block, stored as one file:
///
///   "DIFUSECK" | u32 version | u64 header_len | header JSON | raw tensor bytes
///
/// All integers little-endian. The header lists every tensor's name, dtype,
/// shape, offset and byte length relative to the start of the data block.
struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;

  uint32_t format_version = kFormatVersion;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void add(const std::string& name, const torch::Tensor& t);
  bool has(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
};

/// Copies every parameter and buffer of `module` into `ckpt` as `prefix + name`.
void export_module(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt);

/// Loads `prefix + name` entries into `module`; every parameter must be present
/// with a matching shape.
void import_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt);

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

nlohmann::json spec_to_json(const DenoiserSpec& s);
DenoiserSpec spec_from_json(const nlohmann::json& j);

}  // namespace difuse
