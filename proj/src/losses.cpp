#include "difuse/losses.hpp"

#include <cmath>

#include "difuse/error.hpp"

namespace difuse {

namespace F = torch::nn::functional;

namespace {

constexpr double kHalfBin = 0.5 / 255.0;

torch::Tensor as_batch(const torch::Tensor& t) {
  switch (t.dim()) {
    case 2: return t.unsqueeze(0).unsqueeze(0);
    case 3: return t.unsqueeze(0);
    case 4: return t;
    default: throw ValidationError("expected a [H, W], [1, H, W] or [B, 1, H, W] tensor");
  }
}

torch::Tensor std_normal_cdf(const torch::Tensor& x) {
  return 0.5 * (1.0 + torch::erf(x / std::sqrt(2.0)));
}

torch::Tensor mean_flat(const torch::Tensor& x) {
  if (x.dim() <= 1) return x;
  std::vector<int64_t> dims;
  for (int64_t d = 1; d < x.dim(); ++d) dims.push_back(d);
  return x.mean(dims);
}

}  // namespace

torch::Tensor normal_kl(const torch::Tensor& mean1, const torch::Tensor& logvar1,
                        const torch::Tensor& mean2, const torch::Tensor& logvar2) {
  return 0.5 * (-1.0 + logvar2 - logvar1 + torch::exp(logvar1 - logvar2) +
                (mean1 - mean2).pow(2) * torch::exp(-logvar2));
}

torch::Tensor discretized_gaussian_log_likelihood(const torch::Tensor& x, const torch::Tensor& mean,
                                                  const torch::Tensor& log_var) {
  require(x.sizes() == mean.sizes() && x.sizes() == log_var.sizes(),
          "discretized likelihood: shape mismatch");
  auto centered = x - mean;
  auto inv_std = torch::exp(-0.5 * log_var);
  auto cdf_plus = std_normal_cdf(inv_std * (centered + kHalfBin));
  auto cdf_min = std_normal_cdf(inv_std * (centered - kHalfBin));
  auto log_cdf_plus = torch::log(cdf_plus.clamp_min(1e-12));
  auto log_one_minus_cdf_min = torch::log((1.0 - cdf_min).clamp_min(1e-12));
  auto log_delta = torch::log((cdf_plus - cdf_min).clamp_min(1e-12));
  return torch::where(x < kHalfBin, log_cdf_plus,
                      torch::where(x > 1.0 - kHalfBin, log_one_minus_cdf_min, log_delta));
}

torch::Tensor variational_term(const torch::Tensor& eps_pred, const torch::Tensor& x0,
                               const torch::Tensor& x_t, const torch::Tensor& t,
                               const torch::Tensor& v_pred, const NoiseSchedule& sched) {
  require(eps_pred.sizes() == x0.sizes() && eps_pred.sizes() == x_t.sizes() &&
              eps_pred.sizes() == v_pred.sizes(),
          "variational_term: shape mismatch");
  sched.check_steps(t);
  require(t.numel() == x0.size(0), "variational_term: one step per batch element");

  auto model_mean = posterior_mean(x_t, eps_pred.detach(), t, sched);
  auto model_log_var = posterior_log_variance(v_pred, t, sched);

  auto true_mean = q_posterior_mean(x0, x_t, t, sched);
  std::vector<double> true_log_var_table(static_cast<size_t>(sched.steps()));
  for (size_t i = 0; i < true_log_var_table.size(); ++i) {
    true_log_var_table[i] = std::log(sched.beta_tildes()[i]);
  }
  auto true_log_var = sched.gather(true_log_var_table, t, x0.dim(), x0.scalar_type())
                          .expand_as(x0);

  auto kl = mean_flat(normal_kl(true_mean, true_log_var, model_mean, model_log_var));
  auto nll = -mean_flat(discretized_gaussian_log_likelihood(x0, model_mean, model_log_var));
  return torch::where(t.to(x0.device()) == 0, nll.to(kl.scalar_type()), kl);
}

torch::Tensor hybrid_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred,
                          const torch::Tensor& x0, const torch::Tensor& x_t, const torch::Tensor& t,
                          const torch::Tensor& v_pred, const NoiseSchedule& sched, double lambda) {
  require(eps_true.sizes() == eps_pred.sizes() && eps_true.sizes() == x0.sizes() &&
              eps_true.sizes() == x_t.sizes() && eps_true.sizes() == v_pred.sizes(),
          "hybrid_loss: shape mismatch");
  require(lambda >= 0.0, "hybrid_loss: lambda must be >= 0");
  sched.check_steps(t);
  require(t.numel() == x0.size(0), "hybrid_loss: one step per batch element");

  auto mse = mean_flat((eps_true - eps_pred).pow(2));
  if (lambda == 0.0) return mse.mean();
  return (mse + lambda * variational_term(eps_pred, x0, x_t, t, v_pred, sched)).mean();
}

std::pair<torch::Tensor, torch::Tensor> sobel(const torch::Tensor& img) {
  require(img.dim() == 4 && img.size(1) == 1, "sobel expects [B, 1, H, W]");
  auto opts = torch::TensorOptions().dtype(img.scalar_type());
  auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, opts).view({1, 1, 3, 3});
  auto ky = kx.transpose(2, 3).contiguous();
  auto padded = F::pad(img, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  return {F::conv2d(padded, kx), F::conv2d(padded, ky)};
}

FcmLossTerms fcm_loss_terms(const torch::Tensor& x0_hat, const torch::Tensor& xb,
                            const torch::Tensor& y, double gamma_int, double gamma_grad) {
  require(x0_hat.sizes() == xb.sizes() && x0_hat.sizes() == y.sizes(), "fcm_loss: size mismatch");
  require(gamma_int >= 0.0 && gamma_grad >= 0.0, "fcm_loss: weights must be >= 0");
  auto f = as_batch(x0_hat);
  auto a = as_batch(xb);
  auto b = as_batch(y);
  require(f.size(1) == 1, "fcm_loss: single-channel operands only");

  auto intensity = (f.abs() - torch::maximum(a.abs(), b.abs())).abs().mean();

  auto [fx, fy] = sobel(f);
  auto [ax, ay] = sobel(a);
  auto [bx, by] = sobel(b);
  auto tx = torch::where(ax.abs() >= bx.abs(), ax, bx);
  auto ty = torch::where(ay.abs() >= by.abs(), ay, by);
  auto gradient = 0.5 * ((fx - tx).abs().mean() + (fy - ty).abs().mean());

  return {intensity, gradient, gamma_int * intensity + gamma_grad * gradient};
}

torch::Tensor fcm_loss(const torch::Tensor& x0_hat, const torch::Tensor& xb, const torch::Tensor& y,
                       double gamma_int, double gamma_grad) {
  return fcm_loss_terms(x0_hat, xb, y, gamma_int, gamma_grad).total;
}

torch::Tensor masked_contrast(const torch::Tensor& inside, const torch::Tensor& outside,
                              const torch::Tensor& mask) {
  require(inside.dim() == 4 && inside.sizes() == outside.sizes() &&
              inside.sizes() == mask.sizes(),
          "masked_contrast: expects equal [B, 1, H, W] tensors");
  auto m = mask.to(inside.scalar_type());
  auto n_in = m.sum({1, 2, 3});
  auto n_out = (1.0 - m).sum({1, 2, 3});
  auto mean_in = (inside * m).sum({1, 2, 3}) / n_in.clamp_min(1.0);
  auto mean_out = (outside * (1.0 - m)).sum({1, 2, 3}) / n_out.clamp_min(1.0);
  auto valid = (n_in > 0) & (n_out > 0);
  return torch::where(valid, (mean_in - mean_out).abs(), torch::zeros_like(mean_in));
}

}  // namespace difuse
