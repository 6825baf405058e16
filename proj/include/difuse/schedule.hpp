#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace difuse {

/// Variance tables of a discrete Gaussian diffusion with T steps, indexed 0..T-1.
///
/// beta_tilde[t] = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t] for t >= 1,
/// and beta_tilde[0] = beta[0] so the log-domain interpolation stays total.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int64_t steps, double beta_start, double beta_end);

  int64_t steps() const { return static_cast<int64_t>(beta_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  const std::string& kind() const { return kind_; }

  double beta(int64_t t) const { return beta_.at(index(t)); }
  double alpha(int64_t t) const { return alpha_.at(index(t)); }
  double alpha_bar(int64_t t) const { return alpha_bar_.at(index(t)); }
  /// alpha_bar[t-1], with alpha_bar[-1] = 1 (the clean signal).
  double alpha_bar_prev(int64_t t) const { return t == 0 ? 1.0 : alpha_bar(t - 1); }
  double beta_tilde(int64_t t) const { return beta_tilde_.at(index(t)); }

  std::span<const double> betas() const { return beta_; }
  std::span<const double> alphas() const { return alpha_; }
  std::span<const double> alpha_bars() const { return alpha_bar_; }
  std::span<const double> beta_tildes() const { return beta_tilde_; }

  /// Gathers `table[t]` for a batch of steps and reshapes it to broadcast against
  /// a tensor of rank `rank` whose leading dimension is the batch.
  torch::Tensor gather(std::span<const double> table, const torch::Tensor& t, int64_t rank,
                       torch::ScalarType dtype) const;

  void check_step(int64_t t) const;
  void check_steps(const torch::Tensor& t) const;

 private:
  NoiseSchedule() = default;
  size_t index(int64_t t) const {
    check_step(t);
    return static_cast<size_t>(t);
  }

  std::string kind_ = "linear";
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_;
};

/// Z_t together with the step it belongs to.
struct LatentState {
  int64_t t = 0;
  torch::Tensor value;

  LatentState() = default;
  LatentState(int64_t step, torch::Tensor v);
};

// Closed-form diffusion algebra. Scalar-step overloads act on a tensor of any
// shape; batched overloads take `t` as an int64 tensor of shape [B] matching
// the leading dimension of the operands.

torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);

/// One-shot clean estimate (x_t - sqrt(1 - abar) * eps) / sqrt(abar).
torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps_pred, int64_t t,
                         const NoiseSchedule& sched);
torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                         const torch::Tensor& t, const NoiseSchedule& sched);

/// Model mean of p(x_{t-1} | x_t) from a noise prediction.
torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_pred, int64_t t,
                             const NoiseSchedule& sched);
torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                             const torch::Tensor& t, const NoiseSchedule& sched);

/// Mean of the true posterior q(x_{t-1} | x_t, x0).
torch::Tensor q_posterior_mean(const torch::Tensor& x0, const torch::Tensor& x_t,
                               const torch::Tensor& t, const NoiseSchedule& sched);

/// v*log(beta_t) + (1-v)*log(beta_tilde_t), with v clamped to [0, 1].
torch::Tensor posterior_log_variance(const torch::Tensor& v_pred, int64_t t,
                                     const NoiseSchedule& sched);
torch::Tensor posterior_log_variance(const torch::Tensor& v_pred, const torch::Tensor& t,
                                     const NoiseSchedule& sched);

/// exp of the log-domain interpolation. The endpoints v = 1 and v = 0 return
/// beta_t and beta_tilde_t exactly.
torch::Tensor posterior_variance(const torch::Tensor& v_pred, int64_t t,
                                 const NoiseSchedule& sched);

/// x_{t-1} = mean + sqrt(variance) * z. Pass z = 0 at t = 0.
torch::Tensor sample_prev(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                          const torch::Tensor& v_pred, int64_t t, const NoiseSchedule& sched,
                          const torch::Tensor& z);

/// Like sample_prev, but takes the mean of q(x_{t-1} | x_t, x0_hat) with
/// x0_hat = predict_x0(...) clamped to [lo, hi]. Equals sample_prev whenever
/// the clamp is inactive. `x_t` must be batched ([B, ...]).
torch::Tensor sample_prev_clipped(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                                  const torch::Tensor& v_pred, int64_t t, const NoiseSchedule& sched,
                                  const torch::Tensor& z, double lo = 0.0, double hi = 1.0);

}  // namespace difuse
