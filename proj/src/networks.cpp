#include "difuse/networks.hpp"

#include <cmath>
#include <sstream>

#include "difuse/error.hpp"

namespace difuse {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

int64_t groups_for(int64_t channels) {
  for (int64_t g : {8, 4, 2}) {
    if (channels % g == 0 && channels >= g) return g;
  }
  return 1;
}

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1(int64_t in, int64_t out, bool bias = true) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

void check_bundles(const FeatureBundle& a, const FeatureBundle& b, const char* what) {
  require(a.size() == b.size() && a.size() > 0, std::string(what) + ": bundle depth mismatch");
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.scales[i].sizes() != b.scales[i].sizes()) {
      std::ostringstream os;
      os << what << ": scale " << i << " shape mismatch " << a.scales[i].sizes() << " vs "
         << b.scales[i].sizes();
      throw ValidationError(os.str());
    }
  }
}

void check_per_scale(const FeatureBundle& b, const std::vector<torch::Tensor>& w, const char* what) {
  require(w.size() == b.size(), std::string(what) + ": coefficient depth mismatch");
  for (size_t i = 0; i < w.size(); ++i) {
    // Coefficients may broadcast (e.g. a single channel), but never grow the features.
    auto joined = at::infer_size(b.scales[i].sizes(), w[i].sizes());
    require(torch::IntArrayRef(joined) == b.scales[i].sizes(),
            std::string(what) + ": coefficient shape does not broadcast to features");
  }
}

}  // namespace

// ---------------------------------------------------------------- spec

std::vector<int64_t> DenoiserSpec::scale_channels() const {
  std::vector<int64_t> out;
  for (int64_t l = 0; l <= depth; ++l) {
    out.push_back(base_width * (int64_t{1} << std::min<int64_t>(l, 2)));
  }
  return out;
}

void DenoiserSpec::validate() const {
  require(latent_channels >= 1, "latent_channels must be >= 1");
  require(base_width >= 2, "base_width must be >= 2");
  require(depth >= 1 && depth <= 6, "depth must be in [1, 6]");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even");
  require(prediction == "eps" || prediction == "x0", "prediction must be 'eps' or 'x0'");
}

// ---------------------------------------------------------------- time embedding

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim, torch::ScalarType dtype) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, torch::TensorOptions().dtype(torch::kDouble)) /
                          static_cast<double>(half));
  auto args = t.to(torch::kDouble).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({args.sin(), args.cos()}, 1).to(dtype);
}

TimeEmbeddingImpl::TimeEmbeddingImpl(int64_t dim) : dim_(dim) {
  fc1_ = register_module("fc1", torch::nn::Linear(dim, dim));
  fc2_ = register_module("fc2", torch::nn::Linear(dim, dim));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& t) {
  auto e = sinusoidal_embedding(t, dim_, fc1_->weight.scalar_type());
  return fc2_(F::silu(fc1_(e)));
}

// ---------------------------------------------------------------- residual block

ResBlockImpl::ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(groups_for(in_ch), in_ch));
  conv1_ = register_module("conv1", conv3(in_ch, out_ch));
  temb_proj_ = register_module("temb", torch::nn::Linear(temb_dim, out_ch));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(groups_for(out_ch), out_ch));
  conv2_ = register_module("conv2", conv3(out_ch, out_ch));
  if (in_ch != out_ch) shortcut_ = register_module("shortcut", conv1(in_ch, out_ch));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_(F::silu(norm1_(x)));
  h = h + temb_proj_(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(F::silu(norm2_(h)));
  return (shortcut_ ? shortcut_(x) : x) + h;
}

// ---------------------------------------------------------------- encoder / decoder

EncoderImpl::EncoderImpl(const DenoiserSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto ch = spec_.scale_channels();
  time_ = register_module("time", TimeEmbedding(spec_.time_embed_dim));
  conv_in_ = register_module("conv_in", conv3(spec_.in_channels(), ch[0]));
  int64_t prev = ch[0];
  for (int64_t l = 0; l < spec_.depth; ++l) {
    blocks_->push_back(ResBlock(prev, ch[l], spec_.time_embed_dim));
    downs_->push_back(conv3(ch[l], ch[l], 2));
    prev = ch[l];
  }
  register_module("blocks", blocks_);
  register_module("downs", downs_);
  mid_ = register_module("mid", ResBlock(prev, ch.back(), spec_.time_embed_dim));
}

FeatureBundle EncoderImpl::forward(const torch::Tensor& z_t, const torch::Tensor& condition,
                                   const torch::Tensor& t) {
  require(z_t.dim() == 4 && condition.dim() == 4, "encode: inputs must be [B, C, H, W]");
  require(z_t.size(1) == spec_.latent_channels && condition.size(1) == spec_.latent_channels,
          "encode: channel count does not match the denoiser");
  require(z_t.size(0) == condition.size(0) && z_t.size(2) == condition.size(2) &&
              z_t.size(3) == condition.size(3),
          "encode: latent and condition sizes differ");
  const int64_t stride = int64_t{1} << spec_.depth;
  require(z_t.size(2) % stride == 0 && z_t.size(3) % stride == 0,
          "encode: spatial size must be divisible by 2^depth");
  require(t.dim() == 1 && t.size(0) == z_t.size(0), "encode: one step per batch element");

  auto temb = time_(t);
  auto h = conv_in_(torch::cat({z_t, condition}, 1));
  FeatureBundle out;
  for (int64_t l = 0; l < spec_.depth; ++l) {
    h = blocks_[l]->as<ResBlock>()->forward(h, temb);
    out.scales.push_back(h);
    h = downs_[l]->as<torch::nn::Conv2d>()->forward(h);
  }
  out.scales.push_back(mid_(h, temb));
  return out;
}

DecoderImpl::DecoderImpl(const DenoiserSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto ch = spec_.scale_channels();
  time_ = register_module("time", TimeEmbedding(spec_.time_embed_dim));
  mid_ = register_module("mid", ResBlock(ch.back(), ch.back(), spec_.time_embed_dim));
  int64_t prev = ch.back();
  for (int64_t l = spec_.depth - 1; l >= 0; --l) {
    ups_->push_back(conv3(prev, ch[l]));
    blocks_->push_back(ResBlock(2 * ch[l], ch[l], spec_.time_embed_dim));
    prev = ch[l];
  }
  register_module("ups", ups_);
  register_module("blocks", blocks_);
  out_norm_ = register_module("out_norm", torch::nn::GroupNorm(groups_for(ch[0]), ch[0]));
  out_conv_ = register_module("out_conv", conv3(ch[0], spec_.out_channels()));
}

torch::Tensor DecoderImpl::forward(const FeatureBundle& fused, const torch::Tensor& t) {
  require(static_cast<int64_t>(fused.size()) == spec_.depth + 1,
          "decode: bundle depth does not match the decoder");
  auto temb = time_(t);
  auto h = mid_(fused.deepest(), temb);
  for (int64_t i = 0; i < spec_.depth; ++i) {
    const auto l = static_cast<size_t>(spec_.depth - 1 - i);
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{fused.scales[l].size(2),
                                                         fused.scales[l].size(3)})
                              .mode(torch::kNearest));
    h = ups_[i]->as<torch::nn::Conv2d>()->forward(h);
    h = blocks_[i]->as<ResBlock>()->forward(torch::cat({h, fused.scales[l]}, 1), temb);
  }
  return out_conv_(F::silu(out_norm_(h)));
}

DenoiserImpl::DenoiserImpl(const DenoiserSpec& spec) : spec_(spec) {
  spec_.validate();
  encoder_ = register_module("encoder", Encoder(spec_));
  decoder_ = register_module("decoder", Decoder(spec_));
}

// ---------------------------------------------------------------- CBAM / FCM

CbamImpl::CbamImpl(int64_t channels, int64_t reduction) {
  const int64_t hidden = std::max<int64_t>(channels / std::max<int64_t>(reduction, 1), 1);
  mlp1_ = register_module("mlp1", conv1(channels, hidden));
  mlp2_ = register_module("mlp2", conv1(hidden, channels));
  spatial_ = register_module(
      "spatial", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 7).padding(3)));
}

torch::Tensor CbamImpl::forward(const torch::Tensor& x) {
  auto mlp = [&](const torch::Tensor& p) { return mlp2_(F::relu(mlp1_(p))); };
  auto avg = x.mean({2, 3}, true);
  auto mx = x.amax({2, 3}, true);
  auto h = x * torch::sigmoid(mlp(avg) + mlp(mx));
  auto pooled = torch::cat({h.mean(1, true), h.amax(1, true)}, 1);
  return h * torch::sigmoid(spatial_(pooled));
}

FcmScaleImpl::FcmScaleImpl(int64_t channels, int64_t reduction) {
  conv_in_ = register_module("conv_in", conv3(2 * channels, channels));
  cbam_ = register_module("cbam", Cbam(channels, reduction));
  conv_out_ = register_module("conv_out", conv3(channels, channels));
}

torch::Tensor FcmScaleImpl::forward(const torch::Tensor& own, const torch::Tensor& other) {
  auto h = F::silu(conv_in_(torch::cat({own, other}, 1)));
  return conv_out_(cbam_(h));
}

FusionControlImpl::FusionControlImpl(std::vector<int64_t> scale_channels, int64_t reduction)
    : channels_(std::move(scale_channels)), reduction_(reduction) {
  require(!channels_.empty(), "fusion control needs at least one scale");
  for (auto c : channels_) scales_->push_back(FcmScale(c, reduction_));
  register_module("scales", scales_);
}

FusionWeights FusionControlImpl::forward(const FeatureBundle& bx, const FeatureBundle& by) {
  check_bundles(bx, by, "fcm_weights");
  require(bx.size() == channels_.size(), "fcm_weights: bundle depth does not match the module");
  FusionWeights w;
  for (size_t i = 0; i < bx.size(); ++i) {
    require(bx.scales[i].size(1) == channels_[i], "fcm_weights: channel mismatch");
    auto scorer = scales_[i]->as<FcmScale>();
    auto lx = scorer->forward(bx.scales[i], by.scales[i]);
    auto ly = scorer->forward(by.scales[i], bx.scales[i]);
    auto p = torch::softmax(torch::stack({lx, ly}), 0);
    w.x.push_back(p[0]);
    w.y.push_back(p[1]);
  }
  return w;
}

// ---------------------------------------------------------------- re-modulation

RemodBlockImpl::RemodBlockImpl(std::vector<int64_t> scale_channels, int64_t hidden)
    : channels_(std::move(scale_channels)), hidden_(hidden) {
  require(!channels_.empty(), "remod block needs at least one scale");
  require(hidden_ >= 1, "remod hidden width must be >= 1");
  for (auto c : channels_) {
    convs_in_->push_back(conv3(1, hidden_));
    convs_out_->push_back(conv3(hidden_, 2 * c));
  }
  register_module("convs_in", convs_in_);
  register_module("convs_out", convs_out_);
  gates_ = register_parameter("gates", torch::zeros({static_cast<int64_t>(channels_.size())}));
}

ModulationCoeffs RemodBlockImpl::forward(const torch::Tensor& mask) {
  require(mask.dim() == 4 && mask.size(1) == 1, "remod: mask must be [B, 1, H, W]");
  require(((mask == 0) | (mask == 1)).all().item<bool>(), "remod: mask must be binary");
  const auto dtype = gates_.scalar_type();
  ModulationCoeffs k;
  for (size_t s = 0; s < channels_.size(); ++s) {
    const auto scale = static_cast<int64_t>(s);
    auto m = downsample_mask(mask, scale).to(dtype);
    auto h = convs_out_[s]->as<torch::nn::Conv2d>()->forward(
        F::silu(convs_in_[s]->as<torch::nn::Conv2d>()->forward(m)));
    auto residual = (F::softplus(h) - 1.0) * gates_[scale];
    auto parts = residual.chunk(2, 1);
    k.x.push_back(1.0 + m * parts[0]);
    k.y.push_back(1.0 + m * parts[1]);
  }
  return k;
}

void RemodBlockImpl::project() {
  torch::NoGradGuard guard;
  gates_.clamp_(0.0, 1.0);
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t scale) {
  require(mask.dim() == 4, "mask must be [B, 1, H, W]");
  if (scale == 0) return mask;
  const int64_t stride = int64_t{1} << scale;
  return mask.index({Slice(), Slice(), Slice(None, None, stride), Slice(None, None, stride)});
}

// ---------------------------------------------------------------- free operations

std::vector<FeatureBundle> encode(Denoiser& net, const torch::Tensor& z_t,
                                  const std::vector<torch::Tensor>& conditions,
                                  const torch::Tensor& t) {
  require(!conditions.empty() && conditions.size() <= 2, "encode takes one or two conditions");
  std::vector<FeatureBundle> out;
  for (const auto& c : conditions) out.push_back(net->encoder()->forward(z_t, c, t));
  return out;
}

FusionWeights fcm_weights(FusionControl& fcm, const FeatureBundle& bx, const FeatureBundle& by) {
  return fcm->forward(bx, by);
}

FeatureBundle fuse_features(const FeatureBundle& bx, const FeatureBundle& by,
                            const FusionWeights& w) {
  check_bundles(bx, by, "fuse_features");
  check_per_scale(bx, w.x, "fuse_features");
  check_per_scale(by, w.y, "fuse_features");
  FeatureBundle out;
  for (size_t i = 0; i < bx.size(); ++i) {
    out.scales.push_back(bx.scales[i] * w.x[i] + by.scales[i] * w.y[i]);
  }
  return out;
}

FixedRule parse_fixed_rule(const std::string& name) {
  if (name == "max") return FixedRule::kMax;
  if (name == "add") return FixedRule::kAdd;
  if (name == "mean") return FixedRule::kMean;
  if (name == "variance") return FixedRule::kVariance;
  throw ValidationError("unknown fusion rule '" + name + "' (max|add|mean|variance)");
}

std::string to_string(FixedRule rule) {
  switch (rule) {
    case FixedRule::kMax: return "max";
    case FixedRule::kAdd: return "add";
    case FixedRule::kMean: return "mean";
    case FixedRule::kVariance: return "variance";
  }
  return "max";
}

torch::Tensor local_variance(const torch::Tensor& x) {
  require(x.dim() == 4, "local_variance expects [B, C, H, W]");
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto padded = F::pad(x.reshape({b * c, 1, h, w}),
                       F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  // [B*C, 9, H*W]; Welford reduction keeps constant patches at exactly zero.
  auto patches = F::unfold(padded, F::UnfoldFuncOptions({3, 3}));
  return patches.var(1, /*unbiased=*/false).reshape({b, c, h, w});
}

FeatureBundle fuse_features_fixed(const FeatureBundle& bx, const FeatureBundle& by,
                                  FixedRule rule) {
  check_bundles(bx, by, "fuse_features_fixed");
  FeatureBundle out;
  for (size_t i = 0; i < bx.size(); ++i) {
    const auto& x = bx.scales[i];
    const auto& y = by.scales[i];
    switch (rule) {
      case FixedRule::kMax: out.scales.push_back(torch::maximum(x, y)); break;
      case FixedRule::kAdd: out.scales.push_back(x + y); break;
      case FixedRule::kMean: out.scales.push_back((x + y) * 0.5); break;
      case FixedRule::kVariance: {
        auto vx = local_variance(x);
        auto vy = local_variance(y);
        auto total = vx + vy;
        auto both_flat = total == 0;
        auto wx = torch::where(both_flat, torch::full_like(vx, 0.5),
                               vx / torch::where(both_flat, torch::ones_like(total), total));
        out.scales.push_back(x * wx + y * (1.0 - wx));
        break;
      }
    }
  }
  return out;
}

std::pair<torch::Tensor, torch::Tensor> decode(Denoiser& net, const FeatureBundle& fused,
                                               const torch::Tensor& t) {
  auto out = net->decoder()->forward(fused, t);
  require(out.size(1) % 2 == 0, "decode: output channel count must be even");
  auto heads = out.chunk(2, 1);
  return {heads[0], heads[1]};
}

ModulationCoeffs remod_coeffs(RemodBlock& block, const torch::Tensor& mask) {
  return block->forward(mask);
}

FeatureBundle apply_remod(const FeatureBundle& bx, const FeatureBundle& by,
                          const FusionWeights& w, const ModulationCoeffs& k) {
  check_bundles(bx, by, "apply_remod");
  check_per_scale(bx, w.x, "apply_remod");
  check_per_scale(by, w.y, "apply_remod");
  check_per_scale(bx, k.x, "apply_remod");
  check_per_scale(by, k.y, "apply_remod");
  FeatureBundle out;
  for (size_t i = 0; i < bx.size(); ++i) {
    out.scales.push_back((bx.scales[i] * w.x[i]) * k.x[i] + (by.scales[i] * w.y[i]) * k.y[i]);
  }
  return out;
}

}  // namespace difuse
