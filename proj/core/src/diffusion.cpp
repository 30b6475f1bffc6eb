#include "volcomp/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "volcomp/errors.hpp"
#include "volcomp/rng.hpp"

namespace volcomp {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw InvalidArgument(fmt::format("{}: shape mismatch ({} vs {} elements)", what, a.size(), b.size()));
  }
}

void require_step(const NoiseSchedule& sched, int t, const char* what) {
  if (t < 1 || t > sched.steps()) {
    throw InvalidArgument(fmt::format("{}: step {} outside [1, {}]", what, t, sched.steps()));
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) {
    throw InvalidArgument("noise schedule needs at least one step");
  }
  alpha_bars_.resize(betas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw InvalidArgument(fmt::format("beta_{} = {} outside (0, 1)", i + 1, b));
    }
    alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - b);
  }
}

double NoiseSchedule::beta(int t) const {
  require_step(*this, t, "beta");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw InvalidArgument(fmt::format("alpha_bar: step {} outside [0, {}]", t, steps()));
  }
  return alpha_bars_[static_cast<std::size_t>(t)];
}

NoiseSchedule make_linear_schedule(double beta_start, double beta_end, int steps) {
  if (steps < 1) {
    throw InvalidArgument("schedule needs T >= 1");
  }
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument(fmt::format("need 0 < beta_start <= beta_end < 1, got ({}, {})", beta_start, beta_end));
  }
  if (steps == 1 && beta_start != beta_end) {
    throw InvalidArgument("a single-step schedule needs beta_start == beta_end");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  }
  // Pin the endpoint exactly; the affine formula can be off by an ulp.
  betas.back() = beta_end;
  return NoiseSchedule(std::move(betas));
}

std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched) {
  require_same_size(x0, eps, "q_sample");
  require_step(sched, t, "q_sample");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                               const NoiseSchedule& sched) {
  require_same_size(x_t, eps_hat, "predict_x0");
  require_step(sched, t, "predict_x0");
  const double ab = sched.alpha_bar(t);
  const double inv_a = 1.0 / std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - s * eps_hat[i]) * inv_a;
  return out;
}

std::vector<double> eps_from_x0(std::span<const double> x_t, std::span<const double> x0, int t,
                                const NoiseSchedule& sched) {
  require_same_size(x_t, x0, "eps_from_x0");
  require_step(sched, t, "eps_from_x0");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double inv_s = 1.0 / std::sqrt(1.0 - ab);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - a * x0[i]) * inv_s;
  return out;
}

std::vector<double> ddim_step(std::span<const double> x_t, std::span<const double> eps_hat, int t, int t_prev,
                              const NoiseSchedule& sched, double eta, std::span<const double> noise) {
  require_same_size(x_t, eps_hat, "ddim_step");
  require_step(sched, t, "ddim_step");
  if (t_prev < 0 || t_prev >= t) {
    throw InvalidArgument(fmt::format("ddim_step: need 0 <= t_prev < t, got t={} t_prev={}", t, t_prev));
  }
  if (!(eta >= 0.0)) {
    throw InvalidArgument("ddim_step: eta must be >= 0");
  }
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
  if (sigma > 0.0) require_same_size(x_t, noise, "ddim_step noise");

  const double inv_a_t = 1.0 / std::sqrt(ab_t);
  const double s_t = std::sqrt(1.0 - ab_t);
  const double a_prev = std::sqrt(ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0_hat = (x_t[i] - s_t * eps_hat[i]) * inv_a_t;
    double v = a_prev * x0_hat + dir * eps_hat[i];
    if (sigma > 0.0) v += sigma * noise[i];
    out[i] = v;
  }
  return out;
}

std::vector<double> ddpm_step(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                              const NoiseSchedule& sched, std::span<const double> noise) {
  require_same_size(x_t, eps_hat, "ddpm_step");
  require_step(sched, t, "ddpm_step");
  if (t > 1) require_same_size(x_t, noise, "ddpm_step noise");
  const double beta = sched.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sd = std::sqrt(beta);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double mu = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
    out[i] = t > 1 ? mu + sd * noise[i] : mu;
  }
  return out;
}

double training_loss(std::span<const double> eps, std::span<const double> eps_hat) {
  require_same_size(eps, eps_hat, "training_loss");
  if (eps.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_hat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

std::vector<int> ddim_timesteps(int total_steps, int sample_steps) {
  if (total_steps < 1 || sample_steps < 1) {
    throw InvalidArgument("ddim_timesteps: step counts must be positive");
  }
  const int n = std::min(sample_steps, total_steps);
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(n));
  for (int i = n; i >= 1; --i) {
    const int t = static_cast<int>(std::lround(static_cast<double>(i) * total_steps / n));
    if (ts.empty() || t < ts.back()) ts.push_back(std::max(t, 1));
  }
  return ts;
}

std::vector<double> ddim_sample(const EpsPredictor& predict, std::size_t n, const NoiseSchedule& sched,
                                const SamplerOptions& opts, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  const std::vector<int> ts = ddim_timesteps(sched.steps(), opts.steps);
  std::vector<double> noise;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    std::vector<double> eps = predict(x, t);
    if (eps.size() != n) throw InvalidArgument("eps predictor returned the wrong size");
    if (opts.clip_x0) {
      std::vector<double> x0 = predict_x0(x, eps, t, sched);
      for (double& v : x0) v = std::clamp(v, -1.0, 1.0);
      eps = eps_from_x0(x, x0, t, sched);
    }
    if (opts.eta > 0.0) {
      noise.resize(n);
      for (double& v : noise) v = rng.normal();
    }
    x = ddim_step(x, eps, t, t_prev, sched, opts.eta, noise);
  }
  return x;
}

}  // namespace volcomp
