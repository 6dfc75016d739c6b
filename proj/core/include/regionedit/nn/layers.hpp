#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "regionedit/nn/ops.hpp"
#include "regionedit/rng.hpp"

namespace regionedit::nn {

// Ordered, named collection of trainable tensors. The order is part of the
// weights.bin format, so models must register parameters deterministically.
class ParameterSet {
 public:
  Var add(const std::string& name, Mat init);

  const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
  Var find(const std::string& name) const;
  void zero_grad() const;
  std::size_t scalar_count() const;
  // Frozen parameters receive no gradient, so inference graphs that
  // differentiate with respect to an input leave shared weights untouched.
  void set_trainable(bool trainable) const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound);

struct Linear {
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
         double gain = 1.0);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }

  Var weight;
  Var bias;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, int width);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }

  Var gamma;
  Var beta;
};

// 2-D convolution on NHWC rows ((batch*H*W) x C) via im2col + matmul.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int pad, Rng& rng);

  // Returns (batch*Ho*Wo) x out_channels and writes the output plane size.
  Var operator()(const Var& x, int batch, int height, int width, int* out_height,
                 int* out_width) const;

 private:
  IndexMap map_for(int batch, int height, int width) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  Linear proj_;
  struct Cache {
    std::mutex mutex;
    std::map<std::tuple<int, int, int>, IndexMap> maps;
  };
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// Pre-norm transformer encoder block.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterSet& params, const std::string& name, int width, int heads,
                   int mlp_width, Rng& rng);

  Var operator()(const Var& x, int batch, int tokens) const;

 private:
  int heads_ = 1;
  LayerNorm norm1_;
  LayerNorm norm2_;
  Linear qkv_;
  Linear out_;
  Linear fc1_;
  Linear fc2_;
};

// Sinusoidal embedding of an integer timestep, 1 x dim.
Mat timestep_embedding(int step, int dim);

}  // namespace regionedit::nn
