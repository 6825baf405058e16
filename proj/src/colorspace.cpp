#include "difuse/colorspace.hpp"

#include "difuse/error.hpp"

namespace difuse {

namespace {

// Written in difference form so that R = G = B gives Y = G and neutral chroma
// exactly, with no rounding residue.
constexpr double kR = 0.299;
constexpr double kB = 0.114;
constexpr double kCbScale = 0.5 / (1.0 - kB);
constexpr double kCrScale = 0.5 / (1.0 - kR);
constexpr double kCrToR = 1.402;
constexpr double kCbToG = 0.344136;
constexpr double kCrToG = 0.714136;
constexpr double kCbToB = 1.772;

}  // namespace

Image::Image(torch::Tensor values) {
  require(values.defined() && values.dim() == 3, "image must be [C, H, W]");
  require(values.size(0) == 1 || values.size(0) == 3, "image must have 1 or 3 channels");
  require(values.size(1) > 0 && values.size(2) > 0, "image must be non-empty");
  auto v = values.to(torch::kFloat32).contiguous();
  require(torch::isfinite(v).all().item<bool>(), "image values must be finite");
  values_ = v.clamp(0.0, 1.0);
}

Image Image::constant(int64_t channels, int64_t height, int64_t width, double value) {
  return Image(torch::full({channels, height, width}, value, torch::kFloat32));
}

std::pair<BrightnessMap, ChromaMap> split(const Image& img) {
  require(!img.empty() && img.channels() == 3, "split needs a 3-channel image");
  const auto& v = img.values();
  auto r = v[0];
  auto g = v[1];
  auto b = v[2];
  auto y = g + (r - g) * kR + (b - g) * kB;
  auto cb = (b - y) * kCbScale + 0.5;
  auto cr = (r - y) * kCrScale + 0.5;
  return {BrightnessMap{y.unsqueeze(0)}, ChromaMap{torch::stack({cb, cr})}};
}

Image merge(const BrightnessMap& b, const ChromaMap& c) {
  require(b.values.dim() == 3 && b.values.size(0) == 1, "brightness must be [1, H, W]");
  require(c.values.dim() == 3 && c.values.size(0) == 2, "chroma must be [2, H, W]");
  require(b.values.size(1) == c.values.size(1) && b.values.size(2) == c.values.size(2),
          "brightness and chroma sizes differ");
  auto y = b.values[0].to(torch::kFloat32);
  auto cb = c.values[0].to(torch::kFloat32) - 0.5;
  auto cr = c.values[1].to(torch::kFloat32) - 0.5;
  auto r = y + cr * kCrToR;
  auto g = y - cb * kCbToG - cr * kCrToG;
  auto bl = y + cb * kCbToB;
  return Image(torch::stack({r, g, bl}));
}

BrightnessMap brightness_of(const Image& img) {
  require(!img.empty(), "empty image");
  if (img.channels() == 1) return BrightnessMap{img.values().clone()};
  return split(img).first;
}

ChromaMap neutral_chroma(int64_t height, int64_t width) {
  return ChromaMap{torch::full({2, height, width}, 0.5, torch::kFloat32)};
}

}  // namespace difuse
