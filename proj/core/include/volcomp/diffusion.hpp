#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace volcomp {

/// Variance schedule beta_1..beta_T with cumulative products
/// alpha_bar_t = prod_{s<=t} (1 - beta_s). Steps are 1-based; alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  [[nodiscard]] int steps() const { return static_cast<int>(betas_.size()); }
  [[nodiscard]] double beta(int t) const;
  [[nodiscard]] double alpha(int t) const { return 1.0 - beta(t); }
  [[nodiscard]] double alpha_bar(int t) const;

  [[nodiscard]] std::span<const double> betas() const { return betas_; }
  [[nodiscard]] std::span<const double> alpha_bars() const { return {alpha_bars_.data() + 1, betas_.size()}; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0 holds the alpha_bar_0 = 1 convention
};

/// Equal increments from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule make_linear_schedule(double beta_start, double beta_end, int steps);

struct LinearScheduleConfig {
  double beta_start = 1e-4;
  double beta_end = 5e-3;
  int steps = 4000;

  [[nodiscard]] NoiseSchedule make() const { return make_linear_schedule(beta_start, beta_end, steps); }
  friend bool operator==(const LinearScheduleConfig&, const LinearScheduleConfig&) = default;
};

// Stage defaults: 1e-4 -> 5e-3 over 4000 steps for generation,
// 1e-4 -> 2e-2 over 1000 steps for super-resolution.
inline constexpr LinearScheduleConfig kGenerateSchedule{1e-4, 5e-3, 4000};
inline constexpr LinearScheduleConfig kSrSchedule{1e-4, 2e-2, 1000};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, for 1 <= t <= T.
std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched);

/// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                               const NoiseSchedule& sched);

/// Noise that q_sample would have needed to turn x0 into x_t; the inverse of
/// predict_x0 in its eps argument.
std::vector<double> eps_from_x0(std::span<const double> x_t, std::span<const double> x0, int t,
                                const NoiseSchedule& sched);

/// Generalized DDIM update t -> t_prev (0 <= t_prev < t <= T):
///   sigma = eta * sqrt((1 - abar_prev) / (1 - abar_t)) * sqrt(1 - abar_t / abar_prev)
///   x_prev = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps_hat + sigma * noise
/// `noise` is ignored (and may be empty) when eta == 0.
std::vector<double> ddim_step(std::span<const double> x_t, std::span<const double> eps_hat, int t, int t_prev,
                              const NoiseSchedule& sched, double eta, std::span<const double> noise);

/// Ancestral DDPM update t -> t-1 with fixed variance beta_t:
///   mu = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)
/// Returns mu + sqrt(beta_t) noise for t > 1 and mu at t == 1.
std::vector<double> ddpm_step(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                              const NoiseSchedule& sched, std::span<const double> noise);

/// Simplified epsilon-prediction objective: mean squared error over all elements.
double training_loss(std::span<const double> eps, std::span<const double> eps_hat);

/// Evenly spaced strictly decreasing DDIM timesteps starting at T. The
/// caller steps from each entry to the next and from the last entry to 0.
std::vector<int> ddim_timesteps(int total_steps, int sample_steps);

struct SamplerOptions {
  int steps = 50;
  double eta = 0.0;
  // Clamp x0_hat to the data range [-1, 1] at every step and re-derive eps from it.
  bool clip_x0 = true;
};

/// eps_hat for the current state at step t.
using EpsPredictor = std::function<std::vector<double>(std::span<const double> x_t, int t)>;

/// DDIM from pure Gaussian noise x_T ~ N(0, I) of n elements down to step 0.
/// Deterministic in seed; with eta == 0 the seed only sets x_T.
std::vector<double> ddim_sample(const EpsPredictor& predict, std::size_t n, const NoiseSchedule& sched,
                                const SamplerOptions& opts, std::uint64_t seed);

}  // namespace volcomp
