#include "difuse/schedule.hpp"

#include <cmath>
#include <sstream>

#include "difuse/error.hpp"

namespace difuse {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ValidationError(os.str());
  }
}

torch::Tensor clamp_unit(const torch::Tensor& v) { return v.clamp(0.0, 1.0); }

}  // namespace

NoiseSchedule NoiseSchedule::linear(int64_t steps, double beta_start, double beta_end) {
  require(steps >= 2, "linear schedule needs at least 2 steps");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "linear schedule needs 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.kind_ = "linear";
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<size_t>(steps);
  s.beta_.resize(n);
  s.alpha_.resize(n);
  s.alpha_bar_.resize(n);
  s.beta_tilde_.resize(n);

  double cumulative = 1.0;
  for (size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    cumulative *= s.alpha_[i];
    s.alpha_bar_[i] = cumulative;
  }
  s.beta_tilde_[0] = s.beta_[0];
  for (size_t i = 1; i < n; ++i) {
    s.beta_tilde_[i] = (1.0 - s.alpha_bar_[i - 1]) / (1.0 - s.alpha_bar_[i]) * s.beta_[i];
  }
  return s;
}

void NoiseSchedule::check_step(int64_t t) const {
  if (t < 0 || t >= steps()) {
    std::ostringstream os;
    os << "step " << t << " outside [0, " << steps() - 1 << "]";
    throw ValidationError(os.str());
  }
}

void NoiseSchedule::check_steps(const torch::Tensor& t) const {
  require(t.dim() == 1 && t.scalar_type() == torch::kLong, "steps must be a 1-D int64 tensor");
  if (t.numel() == 0) return;
  check_step(t.min().item<int64_t>());
  check_step(t.max().item<int64_t>());
}

torch::Tensor NoiseSchedule::gather(std::span<const double> table, const torch::Tensor& t,
                                    int64_t rank, torch::ScalarType dtype) const {
  check_steps(t);
  auto full = torch::from_blob(const_cast<double*>(table.data()),
                               {static_cast<int64_t>(table.size())}, torch::kDouble);
  auto picked = full.index_select(0, t.to(torch::kCPU)).to(dtype);
  std::vector<int64_t> shape(static_cast<size_t>(std::max<int64_t>(rank, 1)), 1);
  shape[0] = t.size(0);
  return picked.reshape(shape);
}

LatentState::LatentState(int64_t step, torch::Tensor v) : t(step), value(std::move(v)) {
  require(step >= 0, "latent step must be non-negative");
  require(value.defined() && torch::isfinite(value).all().item<bool>(),
          "latent value must be finite");
}

torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "q_sample");
  const double ab = sched.alpha_bar(t);
  return x0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "q_sample");
  require(t.numel() == x0.size(0), "q_sample: one step per batch element");
  auto ab = sched.gather(sched.alpha_bars(), t, x0.dim(), x0.scalar_type());
  return x0 * ab.sqrt() + eps * (1.0 - ab).sqrt();
}

torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps_pred, int64_t t,
                         const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_pred, "predict_x0");
  const double ab = sched.alpha_bar(t);
  return (x_t - eps_pred * std::sqrt(1.0 - ab)) / std::sqrt(ab);
}

torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                         const torch::Tensor& t, const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_pred, "predict_x0");
  require(t.numel() == x_t.size(0), "predict_x0: one step per batch element");
  auto ab = sched.gather(sched.alpha_bars(), t, x_t.dim(), x_t.scalar_type());
  return (x_t - eps_pred * (1.0 - ab).sqrt()) / ab.sqrt();
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_pred, int64_t t,
                             const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_pred, "posterior_mean");
  const double a = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  return (x_t - eps_pred * ((1.0 - a) / std::sqrt(1.0 - ab))) / std::sqrt(a);
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                             const torch::Tensor& t, const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_pred, "posterior_mean");
  require(t.numel() == x_t.size(0), "posterior_mean: one step per batch element");
  auto a = sched.gather(sched.alphas(), t, x_t.dim(), x_t.scalar_type());
  auto ab = sched.gather(sched.alpha_bars(), t, x_t.dim(), x_t.scalar_type());
  return (x_t - eps_pred * ((1.0 - a) / (1.0 - ab).sqrt())) / a.sqrt();
}

torch::Tensor q_posterior_mean(const torch::Tensor& x0, const torch::Tensor& x_t,
                               const torch::Tensor& t, const NoiseSchedule& sched) {
  check_same_shape(x0, x_t, "q_posterior_mean");
  require(t.numel() == x0.size(0), "q_posterior_mean: one step per batch element");
  const auto n = static_cast<size_t>(sched.steps());
  std::vector<double> c0(n), ct(n);
  for (size_t i = 0; i < n; ++i) {
    const auto s = static_cast<int64_t>(i);
    const double ab = sched.alpha_bar(s);
    const double ab_prev = sched.alpha_bar_prev(s);
    c0[i] = std::sqrt(ab_prev) * sched.beta(s) / (1.0 - ab);
    ct[i] = std::sqrt(sched.alpha(s)) * (1.0 - ab_prev) / (1.0 - ab);
  }
  auto k0 = sched.gather(c0, t, x0.dim(), x0.scalar_type());
  auto kt = sched.gather(ct, t, x0.dim(), x0.scalar_type());
  return x0 * k0 + x_t * kt;
}

torch::Tensor posterior_log_variance(const torch::Tensor& v_pred, int64_t t,
                                     const NoiseSchedule& sched) {
  const double log_beta = std::log(sched.beta(t));
  const double log_tilde = std::log(sched.beta_tilde(t));
  auto v = clamp_unit(v_pred);
  return v * log_beta + (1.0 - v) * log_tilde;
}

torch::Tensor posterior_log_variance(const torch::Tensor& v_pred, const torch::Tensor& t,
                                     const NoiseSchedule& sched) {
  require(t.numel() == v_pred.size(0), "posterior_log_variance: one step per batch element");
  const auto n = static_cast<size_t>(sched.steps());
  std::vector<double> log_beta(n), log_tilde(n);
  for (size_t i = 0; i < n; ++i) {
    log_beta[i] = std::log(sched.betas()[i]);
    log_tilde[i] = std::log(sched.beta_tildes()[i]);
  }
  auto lb = sched.gather(log_beta, t, v_pred.dim(), v_pred.scalar_type());
  auto lt = sched.gather(log_tilde, t, v_pred.dim(), v_pred.scalar_type());
  auto v = clamp_unit(v_pred);
  return v * lb + (1.0 - v) * lt;
}

torch::Tensor posterior_variance(const torch::Tensor& v_pred, int64_t t,
                                 const NoiseSchedule& sched) {
  auto v = clamp_unit(v_pred);
  auto interior = posterior_log_variance(v, t, sched).exp();
  auto beta = torch::full_like(interior, sched.beta(t));
  auto tilde = torch::full_like(interior, sched.beta_tilde(t));
  return torch::where(v == 1.0, beta, torch::where(v == 0.0, tilde, interior));
}

torch::Tensor sample_prev(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                          const torch::Tensor& v_pred, int64_t t, const NoiseSchedule& sched,
                          const torch::Tensor& z) {
  check_same_shape(x_t, eps_pred, "sample_prev");
  check_same_shape(x_t, v_pred, "sample_prev");
  check_same_shape(x_t, z, "sample_prev");
  auto mean = posterior_mean(x_t, eps_pred, t, sched);
  return mean + posterior_variance(v_pred, t, sched).sqrt() * z;
}

}  // namespace difuse

namespace difuse {

torch::Tensor sample_prev_clipped(const torch::Tensor& x_t, const torch::Tensor& eps_pred,
                                  const torch::Tensor& v_pred, int64_t t, const NoiseSchedule& sched,
                                  const torch::Tensor& z, double lo, double hi) {
  check_same_shape(x_t, eps_pred, "sample_prev_clipped");
  check_same_shape(x_t, v_pred, "sample_prev_clipped");
  check_same_shape(x_t, z, "sample_prev_clipped");
  require(lo < hi, "sample_prev_clipped: empty clip band");
  auto x0 = predict_x0(x_t, eps_pred, t, sched).clamp(lo, hi);
  auto steps = torch::full({x_t.size(0)}, t, torch::kInt64);
  auto mean = q_posterior_mean(x0, x_t, steps, sched);
  return mean + posterior_variance(v_pred, t, sched).sqrt() * z;
}

}  // namespace difuse
