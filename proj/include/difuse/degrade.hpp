#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "difuse/colorspace.hpp"

namespace difuse {

/// Composite degradation: a color cast, an exposure change and sensor noise.
struct DegradationSpec {
  std::array<double, 3> cast_gains{1.0, 1.0, 1.0};  // r, g, b multipliers
  double noise_sigma = 0.0;                          // in [0, 1] units
  double gamma = 1.0;                                // > 1 darkens, < 1 brightens
  uint64_t seed = 0;

  static DegradationSpec identity() { return {}; }
  bool is_identity() const;
  void validate() const;
};

enum class Severity { kLight, kMedium, kHeavy };

Severity parse_severity(const std::string& name);
std::string to_string(Severity s);

struct SeverityRange {
  double gain_lo, gain_hi;
  double gamma_lo, gamma_hi;
  double sigma_lo, sigma_hi;
};

/// Sampling ranges per severity; overridable from the [degradation] config section.
struct DegradationRanges {
  SeverityRange light{0.9, 1.1, 0.8, 1.25, 0.0, 0.05};
  SeverityRange medium{0.75, 1.25, 0.6, 1.7, 0.0, 0.1};
  SeverityRange heavy{0.6, 1.4, 0.4, 2.5, 0.0, 0.15};

  const SeverityRange& at(Severity s) const;
  SeverityRange& at(Severity s);
};

/// Applies cast -> gamma -> additive Gaussian noise -> clamp.
///
/// For color images the gamma acts on brightness only; for single-channel
/// images the cast has no meaning and is skipped. The identity spec returns the
/// input unchanged, bit for bit.
Image apply(const Image& img, const DegradationSpec& spec);

/// Draws a spec: gains uniform per channel, gamma log-uniform, sigma uniform,
/// and a fresh noise seed, all from `rng`.
DegradationSpec sample_spec(Severity severity, std::mt19937_64& rng,
                            const DegradationRanges& ranges = {});

}  // namespace difuse
