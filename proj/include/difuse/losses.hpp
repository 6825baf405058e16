#pragma once

#include <torch/torch.h>

#include <utility>

#include "difuse/schedule.hpp"

namespace difuse {

/// KL(N(mean1, exp(logvar1)) || N(mean2, exp(logvar2))), elementwise.
torch::Tensor normal_kl(const torch::Tensor& mean1, const torch::Tensor& logvar1,
                        const torch::Tensor& mean2, const torch::Tensor& logvar2);

/// log-probability of `x` (values in [0, 1] on a 256-level grid) under a
/// Gaussian discretized to that grid, with the edge bins extended to infinity.
torch::Tensor discretized_gaussian_log_likelihood(const torch::Tensor& x, const torch::Tensor& mean,
                                                  const torch::Tensor& log_var);

/// Per-sample variational term ([B]): KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t)) for
/// t > 0 and -log p(x0 | x_1) for t = 0. The model mean uses a detached eps_pred.
torch::Tensor variational_term(const torch::Tensor& eps_pred, const torch::Tensor& x0,
                               const torch::Tensor& x_t, const torch::Tensor& t,
                               const torch::Tensor& v_pred, const NoiseSchedule& sched);

/// Learned-variance training objective, averaged over the batch:
///   ||eps - eps_pred||^2 + lambda * KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t))   for t > 0
///   ||eps - eps_pred||^2 - lambda * log p(x0 | x_1)                           for t = 0
/// The model mean inside the variational term uses a detached eps_pred, so that
/// term only trains the variance head. Squared error and the variational term
/// are both means over the non-batch dimensions.
torch::Tensor hybrid_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred,
                          const torch::Tensor& x0, const torch::Tensor& x_t, const torch::Tensor& t,
                          const torch::Tensor& v_pred, const NoiseSchedule& sched, double lambda);

/// Sobel responses (x, y) of a [B, 1, H, W] tensor with replicate padding.
std::pair<torch::Tensor, torch::Tensor> sobel(const torch::Tensor& img);

struct FcmLossTerms {
  torch::Tensor intensity;
  torch::Tensor gradient;
  torch::Tensor total;
};

/// gamma_int * mean|(|x0_hat| - max(|xb|, |y|))| + gamma_grad * mean|grad x0_hat - G|
/// where G keeps, per Sobel direction and element, whichever source response
/// has the larger magnitude (sign preserved). Accepts [H, W], [1, H, W] or
/// [B, 1, H, W] operands of equal shape.
FcmLossTerms fcm_loss_terms(const torch::Tensor& x0_hat, const torch::Tensor& xb,
                            const torch::Tensor& y, double gamma_int, double gamma_grad);

torch::Tensor fcm_loss(const torch::Tensor& x0_hat, const torch::Tensor& xb, const torch::Tensor& y,
                       double gamma_int, double gamma_grad);

/// Per-sample |mean(inside over M) - mean(outside over 1-M)| for [B, 1, H, W]
/// tensors; samples with an empty region contribute 0.
torch::Tensor masked_contrast(const torch::Tensor& inside, const torch::Tensor& outside,
                              const torch::Tensor& mask);

}  // namespace difuse
