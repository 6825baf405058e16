#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace difuse {

/// A [channels, height, width] float32 image with channels in {1, 3} and
/// values clamped to [0, 1] on construction.
class Image {
 public:
  Image() = default;
  explicit Image(torch::Tensor values);

  static Image constant(int64_t channels, int64_t height, int64_t width, double value);

  int64_t channels() const { return values_.size(0); }
  int64_t height() const { return values_.size(1); }
  int64_t width() const { return values_.size(2); }
  bool empty() const { return !values_.defined(); }
  bool is_color() const { return channels() == 3; }

  const torch::Tensor& values() const { return values_; }

 private:
  torch::Tensor values_;
};

/// Single-channel brightness in [0, 1], shape [1, H, W].
struct BrightnessMap {
  torch::Tensor values;
};

/// Cb/Cr offset-coded around 0.5, shape [2, H, W].
struct ChromaMap {
  torch::Tensor values;
};

/// BT.601 full-range split of a 3-channel image.
std::pair<BrightnessMap, ChromaMap> split(const Image& img);

/// Inverse of split; the result is clamped to [0, 1].
Image merge(const BrightnessMap& b, const ChromaMap& c);

/// Brightness of any image; a 1-channel image is its own brightness.
BrightnessMap brightness_of(const Image& img);

/// Neutral chroma (Cb = Cr = 0.5) of the given size.
ChromaMap neutral_chroma(int64_t height, int64_t width);

}  // namespace difuse
