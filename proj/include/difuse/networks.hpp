#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace difuse {

/// Shape of a conditional denoiser. Input is the noisy latent concatenated with
/// one condition image; output carries a noise head and a variance head.
struct DenoiserSpec {
  int64_t latent_channels = 1;
  int64_t base_width = 64;
  int64_t depth = 3;  // number of 2x downsamplings
  int64_t time_embed_dim = 128;
  /// What the first decoder head carries: "eps" (the noise itself) or "x0"
  /// (a clean estimate the noise prediction is derived from).
  std::string prediction = "eps";

  int64_t in_channels() const { return 2 * latent_channels; }
  int64_t out_channels() const { return 2 * latent_channels; }
  /// Channel count of every bundle scale, finest first, deepest last.
  std::vector<int64_t> scale_channels() const;
  void validate() const;
};

/// Per-scale encoder features for one condition, finest first. The last entry is
/// the bottleneck; the others double as skip connections.
struct FeatureBundle {
  std::vector<torch::Tensor> scales;

  size_t size() const { return scales.size(); }
  const torch::Tensor& deepest() const { return scales.back(); }
};

/// Per-element modality weights at each fused scale; x + y == 1.
struct FusionWeights {
  std::vector<torch::Tensor> x;
  std::vector<torch::Tensor> y;
};

/// Per-element modulation at each scale; exactly 1 wherever the mask is 0.
struct ModulationCoeffs {
  std::vector<torch::Tensor> x;
  std::vector<torch::Tensor> y;
};

/// Sinusoidal step embedding followed by a two-layer MLP.
class TimeEmbeddingImpl : public torch::nn::Module {
 public:
  explicit TimeEmbeddingImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& t);

 private:
  int64_t dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TimeEmbedding);

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim, torch::ScalarType dtype);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear temb_proj_{nullptr};
  torch::nn::Conv2d shortcut_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Shared encoder: (z_t, condition, t) -> FeatureBundle.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const DenoiserSpec& spec);
  FeatureBundle forward(const torch::Tensor& z_t, const torch::Tensor& condition,
                        const torch::Tensor& t);

 private:
  DenoiserSpec spec_;
  TimeEmbedding time_{nullptr};
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::ModuleList blocks_, downs_;
  ResBlock mid_{nullptr};
};
TORCH_MODULE(Encoder);

/// Decoder: fused bundle -> (eps, v), each with latent_channels channels.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const DenoiserSpec& spec);
  torch::Tensor forward(const FeatureBundle& fused, const torch::Tensor& t);

 private:
  DenoiserSpec spec_;
  TimeEmbedding time_{nullptr};
  ResBlock mid_{nullptr};
  torch::nn::ModuleList ups_, blocks_;
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(Decoder);

class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(const DenoiserSpec& spec);

  const DenoiserSpec& spec() const { return spec_; }
  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }

 private:
  DenoiserSpec spec_;
  Encoder encoder_{nullptr};
  Decoder decoder_{nullptr};
};
TORCH_MODULE(Denoiser);

/// Channel attention then spatial attention (CBAM).
class CbamImpl : public torch::nn::Module {
 public:
  CbamImpl(int64_t channels, int64_t reduction);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d mlp1_{nullptr}, mlp2_{nullptr};
  torch::nn::Conv2d spatial_{nullptr};
};
TORCH_MODULE(Cbam);

/// Scores one modality's features given the other's: conv -> CBAM -> conv.
class FcmScaleImpl : public torch::nn::Module {
 public:
  FcmScaleImpl(int64_t channels, int64_t reduction);
  torch::Tensor forward(const torch::Tensor& own, const torch::Tensor& other);

 private:
  torch::nn::Conv2d conv_in_{nullptr};
  Cbam cbam_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(FcmScale);

/// Fusion Control Module: one scorer per bundle scale, normalized across the
/// two modalities with a per-element softmax. The same scorer is applied with
/// the roles swapped, so the module is symmetric in its inputs.
class FusionControlImpl : public torch::nn::Module {
 public:
  FusionControlImpl(std::vector<int64_t> scale_channels, int64_t reduction);

  FusionWeights forward(const FeatureBundle& bx, const FeatureBundle& by);
  const std::vector<int64_t>& scale_channels() const { return channels_; }
  int64_t reduction() const { return reduction_; }

 private:
  std::vector<int64_t> channels_;
  int64_t reduction_;
  torch::nn::ModuleList scales_;
};
TORCH_MODULE(FusionControl);

/// Mask -> modulation coefficients. kappa = 1 + M * g * (softplus(h) - 1) with
/// a per-scale gate g in [0, 1]; g starts at 0 so the block starts as identity.
class RemodBlockImpl : public torch::nn::Module {
 public:
  RemodBlockImpl(std::vector<int64_t> scale_channels, int64_t hidden);

  /// `mask` is [B, 1, H, W] with values in {0, 1}.
  ModulationCoeffs forward(const torch::Tensor& mask);
  /// Clamps the gates back into [0, 1]; call after every optimizer step.
  void project();

  const std::vector<int64_t>& scale_channels() const { return channels_; }
  int64_t hidden() const { return hidden_; }
  torch::Tensor& gates() { return gates_; }

 private:
  std::vector<int64_t> channels_;
  int64_t hidden_;
  torch::nn::ModuleList convs_in_, convs_out_;
  torch::Tensor gates_;
};
TORCH_MODULE(RemodBlock);

/// Nearest-neighbour (top-left) decimation of a [B, 1, H, W] mask by 2^scale.
torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t scale);

/// Runs the shared encoder once per condition with the same latent.
std::vector<FeatureBundle> encode(Denoiser& net, const torch::Tensor& z_t,
                                  const std::vector<torch::Tensor>& conditions,
                                  const torch::Tensor& t);

FusionWeights fcm_weights(FusionControl& fcm, const FeatureBundle& bx, const FeatureBundle& by);

/// phi_x * w_x + phi_y * w_y at every scale.
FeatureBundle fuse_features(const FeatureBundle& bx, const FeatureBundle& by,
                            const FusionWeights& w);

enum class FixedRule { kMax, kAdd, kMean, kVariance };

FixedRule parse_fixed_rule(const std::string& name);
std::string to_string(FixedRule rule);

/// FCM-free fusion rules. The variance rule weights each modality by its local
/// 3x3 patch variance (replicate-padded), falling back to 0.5/0.5 when both are 0.
FeatureBundle fuse_features_fixed(const FeatureBundle& bx, const FeatureBundle& by, FixedRule rule);

/// Local 3x3 variance per element of a [B, C, H, W] tensor.
torch::Tensor local_variance(const torch::Tensor& x);

/// (eps, v) heads split from the decoder output.
std::pair<torch::Tensor, torch::Tensor> decode(Denoiser& net, const FeatureBundle& fused,
                                               const torch::Tensor& t);

ModulationCoeffs remod_coeffs(RemodBlock& block, const torch::Tensor& mask);

/// (phi_x * w_x) * k_x + (phi_y * w_y) * k_y at every scale.
FeatureBundle apply_remod(const FeatureBundle& bx, const FeatureBundle& by,
                          const FusionWeights& w, const ModulationCoeffs& k);

}  // namespace difuse
