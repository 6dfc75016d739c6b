#include "regionedit/schedule.hpp"

#include <cmath>

namespace regionedit {

namespace {

void require_same_shape(const Latent& a, const Latent& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + a.shape().to_string() + " vs " +
                        b.shape().to_string());
  }
}

}  // namespace

void NoiseSchedule::check_step(int t, int lo) const {
  if (t < lo || t > steps()) {
    throw InvalidArgument("t", "step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                                   ", " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_step(t, 1);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t, 1);
  return alphas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_step(t, 0);
  return alpha_bars_[static_cast<std::size_t>(t)];
}

int NoiseSchedule::model_step(int t) const {
  check_step(t, 0);
  return model_steps_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t, 1);
  return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("T", "must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw InvalidArgument("beta", "need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.base_steps_ = steps;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.resize(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    s.betas_[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
  }
  s.alphas_.resize(s.betas_.size());
  s.alpha_bars_.assign(1, 1.0);
  for (std::size_t i = 0; i < s.betas_.size(); ++i) {
    s.alphas_[i] = 1.0 - s.betas_[i];
    s.alpha_bars_.push_back(s.alpha_bars_.back() * s.alphas_[i]);
  }
  s.model_steps_.resize(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) s.model_steps_[static_cast<std::size_t>(t)] = t;
  return s;
}

NoiseSchedule respace(const NoiseSchedule& base, int steps) {
  if (steps < 1 || steps > base.steps()) {
    throw InvalidArgument("steps", "must lie in [1, " + std::to_string(base.steps()) + "]");
  }
  NoiseSchedule s;
  s.base_steps_ = base.base_steps_;
  s.beta_start_ = base.beta_start_;
  s.beta_end_ = base.beta_end_;
  s.model_steps_.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    const long numerator = static_cast<long>(i) * base.steps();
    s.model_steps_[static_cast<std::size_t>(i)] =
        base.model_step(static_cast<int>((numerator + steps / 2) / steps));
  }
  s.alpha_bars_.assign(1, 1.0);
  for (int i = 1; i <= steps; ++i) {
    // Base alpha_bar at the selected timestep, via the base schedule's own indexing.
    const int prev_base = static_cast<int>((static_cast<long>(i - 1) * base.steps() + steps / 2) / steps);
    const int cur_base = static_cast<int>((static_cast<long>(i) * base.steps() + steps / 2) / steps);
    const double beta = 1.0 - base.alpha_bar(cur_base) / base.alpha_bar(prev_base);
    s.betas_.push_back(beta);
    s.alphas_.push_back(1.0 - beta);
    s.alpha_bars_.push_back(s.alpha_bars_.back() * s.alphas_.back());
  }
  return s;
}

NoiseSchedule default_training_schedule() {
  return make_linear_schedule(kTrainingSteps, kBetaStart, kBetaEnd);
}

Latent forward_noise(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& schedule) {
  require_same_shape(z0, eps, "forward_noise");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Latent out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Latent predict_clean(const Latent& z_t, const Latent& eps_hat, int t,
                     const NoiseSchedule& schedule) {
  require_same_shape(z_t, eps_hat, "predict_clean");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Latent out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) / a;
  return out;
}

PosteriorStats posterior_stats(const Latent& z_t, const Latent& eps_hat, int t,
                               const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw InvalidArgument("t", "posterior step " + std::to_string(t) + " outside [1, " +
                                   std::to_string(schedule.steps()) + "]");
  }
  Latent clean = predict_clean(z_t, eps_hat, t, schedule);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double beta = schedule.beta(t);
  const double clean_coef = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double noisy_coef = std::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  Latent mean(z_t.shape());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    mean[i] = clean_coef * clean[i] + noisy_coef * z_t[i];
  }
  Latent stddev(z_t.shape(), std::sqrt(schedule.posterior_variance(t)));
  return {std::move(mean), std::move(stddev), std::move(clean)};
}

}  // namespace regionedit
