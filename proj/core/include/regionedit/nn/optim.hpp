#pragma once

#include <vector>

#include "regionedit/nn/layers.hpp"

namespace regionedit::nn {

class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
  };

  Adam(const ParameterSet& params, Options options);

  // Applies one update from the gradients currently stored on the
  // parameters, then clears them.
  void step();
  void set_learning_rate(double lr) noexcept { options_.learning_rate = lr; }
  double learning_rate() const noexcept { return options_.learning_rate; }

 private:
  const ParameterSet& params_;
  Options options_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long step_count_ = 0;
};

// Cosine decay from `base` to 10% of `base` over `total` steps.
double cosine_lr(double base, long step, long total);

}  // namespace regionedit::nn
