#pragma once

#include <string>
#include <vector>

#include "regionedit/tensor.hpp"

namespace regionedit {

// Discrete diffusion process. Step t = 0 is clean data; t runs 1..steps().
//
//   alpha(t)     = 1 - beta(t)
//   alpha_bar(t) = prod_{i<=t} alpha(i),  alpha_bar(0) = 1
//
// A schedule can be a respaced view of a longer training schedule, in which
// case model_step(t) names the training timestep that step t corresponds to
// (used for the denoiser's time conditioning).
class NoiseSchedule {
 public:
  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  int model_step(int t) const;

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  // Parameters of the linear schedule this one was built from.
  int base_steps() const noexcept { return base_steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  // Reverse-process variance of the fixed (non-learned) posterior:
  //   beta_tilde(t) = (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t)
  double posterior_variance(int t) const;

  friend NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);
  friend NoiseSchedule respace(const NoiseSchedule& base, int steps);

 private:
  void check_step(int t, int lo) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<int> model_steps_;
  int base_steps_ = 0;
  double beta_start_ = 0;
  double beta_end_ = 0;
};

// betas linearly spaced from beta_start to beta_end inclusive.
NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

// Evenly strided subsequence of `base` with `steps` reverse steps. Each new
// step's beta is chosen so alpha_bar matches the base schedule at the
// selected timesteps.
NoiseSchedule respace(const NoiseSchedule& base, int steps);

inline constexpr int kTrainingSteps = 1000;
inline constexpr double kBetaStart = 1e-4;
inline constexpr double kBetaEnd = 0.02;

NoiseSchedule default_training_schedule();

// sqrt(alpha_bar(t)) * z0 + sqrt(1 - alpha_bar(t)) * eps
Latent forward_noise(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& schedule);

// (z_t - sqrt(1 - alpha_bar(t)) * eps_hat) / sqrt(alpha_bar(t))
Latent predict_clean(const Latent& z_t, const Latent& eps_hat, int t,
                     const NoiseSchedule& schedule);

struct PosteriorStats {
  Latent mean;
  Latent stddev;           // per-step scalar broadcast to the latent shape
  Latent predicted_clean;  // the clean-latent estimate the mean was formed from
};

// Mean and standard deviation of q(z_{t-1} | z_t, z0_hat) with z0_hat
// recovered from the noise prediction. Requires 1 <= t <= steps().
PosteriorStats posterior_stats(const Latent& z_t, const Latent& eps_hat, int t,
                               const NoiseSchedule& schedule);

}  // namespace regionedit
