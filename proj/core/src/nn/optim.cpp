#include "regionedit/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace regionedit::nn {

Adam::Adam(const ParameterSet& params, Options options) : params_(params), options_(options) {
  for (const auto& [_, v] : params_.entries()) {
    m_.push_back(Mat::Zero(v.rows(), v.cols()));
    v_.push_back(Mat::Zero(v.rows(), v.cols()));
  }
}

void Adam::step() {
  ++step_count_;
  double clip_factor = 1.0;
  if (options_.grad_clip > 0) {
    double sq = 0;
    for (const auto& [_, p] : params_.entries()) {
      if (p.grad().size() != 0) sq += p.grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.grad_clip) clip_factor = options_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_count_));
  std::size_t i = 0;
  for (const auto& [_, p] : params_.entries()) {
    if (p.grad().size() != 0) {
      const Mat g = p.grad() * clip_factor;
      m_[i] = options_.beta1 * m_[i] + (1 - options_.beta1) * g;
      v_[i] = options_.beta2 * v_[i] + (1 - options_.beta2) * g.cwiseProduct(g);
      Var handle = p;
      handle.mutable_value().array() -=
          options_.learning_rate * (m_[i].array() / bc1) /
          ((v_[i].array() / bc2).sqrt() + options_.eps);
      p.zero_grad();
    }
    ++i;
  }
}

double cosine_lr(double base, long step, long total) {
  if (total <= 0) return base;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace regionedit::nn
