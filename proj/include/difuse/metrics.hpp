#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "difuse/colorspace.hpp"

namespace difuse::metrics {

/// Row-major grayscale plane on the 0-255 scale.
struct Plane {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> values;

  double at(int64_t i, int64_t j) const { return values[static_cast<size_t>(i * width + j)]; }
  double& at(int64_t i, int64_t j) { return values[static_cast<size_t>(i * width + j)]; }
  bool is_constant() const;
};

/// Converts a [H, W] or [1, H, W] tensor in [0, 1] to the 0-255 scale.
Plane to_plane(const torch::Tensor& img);

struct Constants {
  int bins = 256;
  double vif_noise_variance = 2.0;  // on the 0-255 scale
  int vif_scales = 4;
};

struct MetricReport {
  double en = 0.0;
  double ag = 0.0;
  double sd = 0.0;
  double scd = 0.0;
  double vif = 0.0;
};

/// Shannon entropy (bits) of the 256-bin histogram.
double en(const Plane& img, const Constants& k = {});
/// Mean over pixels with a right and lower neighbour of sqrt((dx^2 + dy^2) / 2).
double ag(const Plane& img);
/// Population standard deviation.
double sd(const Plane& img);
/// Pearson correlation; 0 when either operand is constant.
double pearson(const Plane& a, const Plane& b);
/// corr(fused - y, x) + corr(fused - x, y).
double scd(const Plane& fused, const Plane& x, const Plane& y);
/// Gaussian-channel VIF of `dist` against `ref` over a Gaussian pyramid
/// (window 2^(S-s+1)+1, sigma = window/5, symmetric padding). Returns 0 when
/// the reference carries no information at any scale.
double vif_single(const Plane& ref, const Plane& dist, const Constants& k = {});
/// Mean of vif_single(x, fused) and vif_single(y, fused).
double vif(const Plane& fused, const Plane& x, const Plane& y, const Constants& k = {});

double en(const torch::Tensor& img, const Constants& k = {});
double ag(const torch::Tensor& img);
double sd(const torch::Tensor& img);
double scd(const torch::Tensor& fused, const torch::Tensor& x, const torch::Tensor& y);
double vif(const torch::Tensor& fused, const torch::Tensor& x, const torch::Tensor& y,
           const Constants& k = {});

/// All five metrics; color inputs are evaluated on their brightness channel.
MetricReport report(const Image& fused, const Image& x, const Image& y, const Constants& k = {});

/// Mean of a [H, W] / [1, H, W] image over a binary region.
double region_mean(const torch::Tensor& img, const torch::Tensor& region);
/// Mean of Sobel gx^2 + gy^2 (replicate padding, [0, 1] scale) over a region.
double sobel_energy(const torch::Tensor& img, const torch::Tensor& region);

struct EvaluationRow {
  std::string image_id;
  MetricReport scores;
};

/// Scores every PNG in `fused_dir` against same-named files in `x_dir` and
/// `y_dir`, sorted by id. Work is spread over `workers` threads.
std::vector<EvaluationRow> evaluate_directory(const std::filesystem::path& fused_dir,
                                              const std::filesystem::path& x_dir,
                                              const std::filesystem::path& y_dir, int workers,
                                              const Constants& k = {});

/// CSV with header `image_id,en,ag,sd,scd,vif`, one row per image and a final
/// `mean` row.
std::string to_csv(const std::vector<EvaluationRow>& rows);

}  // namespace difuse::metrics
