#include "difuse/degrade.hpp"

#include <cmath>

#include "difuse/error.hpp"

namespace difuse {

bool DegradationSpec::is_identity() const {
  return cast_gains == std::array<double, 3>{1.0, 1.0, 1.0} && noise_sigma == 0.0 &&
         gamma == 1.0;
}

void DegradationSpec::validate() const {
  for (double g : cast_gains) require(g > 0.0 && std::isfinite(g), "cast gains must be positive");
  require(gamma > 0.0 && std::isfinite(gamma), "gamma must be positive");
  require(noise_sigma >= 0.0 && noise_sigma <= 1.0, "noise sigma must lie in [0, 1]");
}

Severity parse_severity(const std::string& name) {
  if (name == "light") return Severity::kLight;
  if (name == "medium") return Severity::kMedium;
  if (name == "heavy") return Severity::kHeavy;
  throw ValidationError("unknown severity '" + name + "' (light|medium|heavy)");
}

std::string to_string(Severity s) {
  switch (s) {
    case Severity::kLight: return "light";
    case Severity::kMedium: return "medium";
    case Severity::kHeavy: return "heavy";
  }
  return "medium";
}

const SeverityRange& DegradationRanges::at(Severity s) const {
  switch (s) {
    case Severity::kLight: return light;
    case Severity::kHeavy: return heavy;
    case Severity::kMedium: break;
  }
  return medium;
}

SeverityRange& DegradationRanges::at(Severity s) {
  return const_cast<SeverityRange&>(std::as_const(*this).at(s));
}

Image apply(const Image& img, const DegradationSpec& spec) {
  spec.validate();
  require(!img.empty(), "cannot degrade an empty image");
  if (spec.is_identity()) return img;

  auto v = img.values().clone();
  if (img.is_color()) {
    if (spec.cast_gains != std::array<double, 3>{1.0, 1.0, 1.0}) {
      auto gains = torch::tensor({spec.cast_gains[0], spec.cast_gains[1], spec.cast_gains[2]},
                                 torch::kFloat32)
                       .view({3, 1, 1});
      v = (v * gains).clamp(0.0, 1.0);
    }
    if (spec.gamma != 1.0) {
      auto [b, c] = split(Image(v));
      b.values = b.values.clamp(0.0, 1.0).pow(spec.gamma);
      v = merge(b, c).values().clone();
    }
  } else if (spec.gamma != 1.0) {
    v = v.pow(spec.gamma);
  }

  if (spec.noise_sigma > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(spec.seed);
    v = v + torch::randn(v.sizes(), gen, torch::kFloat32) * spec.noise_sigma;
  }
  return Image(v.clamp(0.0, 1.0));
}

DegradationSpec sample_spec(Severity severity, std::mt19937_64& rng,
                            const DegradationRanges& ranges) {
  const auto& r = ranges.at(severity);
  std::uniform_real_distribution<double> gain(r.gain_lo, r.gain_hi);
  std::uniform_real_distribution<double> log_gamma(std::log(r.gamma_lo), std::log(r.gamma_hi));
  std::uniform_real_distribution<double> sigma(r.sigma_lo, r.sigma_hi);

  DegradationSpec spec;
  for (auto& g : spec.cast_gains) g = gain(rng);
  spec.gamma = std::exp(log_gamma(rng));
  spec.noise_sigma = sigma(rng);
  spec.seed = rng();
  return spec;
}

}  // namespace difuse
