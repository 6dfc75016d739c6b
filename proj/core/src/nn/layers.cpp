#include "regionedit/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace regionedit::nn {

Var ParameterSet::add(const std::string& name, Mat init) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw std::logic_error("duplicate parameter " + name);
  }
  Var v = parameter(std::move(init));
  entries_.emplace_back(name, v);
  return v;
}

Var ParameterSet::find(const std::string& name) const {
  for (const auto& [existing, v] : entries_) {
    if (existing == name) return v;
  }
  throw std::out_of_range("no parameter " + name);
}

void ParameterSet::zero_grad() const {
  for (const auto& [_, v] : entries_) v.zero_grad();
}

void ParameterSet::set_trainable(bool trainable) const {
  for (const auto& [_, v] : entries_) {
    v.node()->requires_grad = trainable;
    if (!trainable) v.zero_grad();
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
               double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  weight = params.add(name + ".weight", uniform_init(rng, in, out, bound));
  bias = params.add(name + ".bias", Mat::Zero(1, out));
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, int width) {
  gamma = params.add(name + ".gamma", Mat::Ones(1, width));
  beta = params.add(name + ".beta", Mat::Zero(1, width));
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
               int kernel, int stride, int pad, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      proj_(params, name, kernel * kernel * in_channels, out_channels, rng) {}

IndexMap Conv2d::map_for(int batch, int height, int width) const {
  std::lock_guard<std::mutex> lock(cache_->mutex);
  auto key = std::make_tuple(batch, height, width);
  auto it = cache_->maps.find(key);
  if (it != cache_->maps.end()) return it->second;
  if (cache_->maps.size() > 16) cache_->maps.clear();
  IndexMap map = im2col_map(batch, height, width, in_channels_, kernel_, stride_, pad_);
  cache_->maps.emplace(key, map);
  return map;
}

Var Conv2d::operator()(const Var& x, int batch, int height, int width, int* out_height,
                       int* out_width) const {
  if (x.cols() != in_channels_ || x.rows() != static_cast<Eigen::Index>(batch) * height * width) {
    throw std::invalid_argument("conv2d: input shape does not match declared geometry");
  }
  const int oh = (height + 2 * pad_ - kernel_) / stride_ + 1;
  const int ow = (width + 2 * pad_ - kernel_) / stride_ + 1;
  Var cols = kernel_ == 1 && stride_ == 1 && pad_ == 0
                 ? x
                 : gather(x, map_for(batch, height, width),
                          static_cast<Eigen::Index>(batch) * oh * ow,
                          kernel_ * kernel_ * in_channels_);
  if (out_height) *out_height = oh;
  if (out_width) *out_width = ow;
  return proj_(cols);
}

TransformerBlock::TransformerBlock(ParameterSet& params, const std::string& name, int width,
                                   int heads, int mlp_width, Rng& rng)
    : heads_(heads),
      norm1_(params, name + ".norm1", width),
      norm2_(params, name + ".norm2", width),
      qkv_(params, name + ".qkv", width, 3 * width, rng),
      out_(params, name + ".out", width, width, rng),
      fc1_(params, name + ".fc1", width, mlp_width, rng),
      fc2_(params, name + ".fc2", mlp_width, width, rng) {}

Var TransformerBlock::operator()(const Var& x, int batch, int tokens) const {
  Var h = add(x, out_(attention(qkv_(norm1_(x)), batch, tokens, heads_)));
  return add(h, fc2_(gelu(fc1_(norm2_(h)))));
}

Mat timestep_embedding(int step, int dim) {
  Mat e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(0, i) = std::sin(step * freq);
    e(0, half + i) = std::cos(step * freq);
  }
  if (dim % 2 == 1) e(0, dim - 1) = 0.0;
  return e;
}

}  // namespace regionedit::nn
