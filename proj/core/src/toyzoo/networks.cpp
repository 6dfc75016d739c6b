#include "regionedit/toyzoo/networks.hpp"

#include <algorithm>
#include <cmath>

#include "regionedit/nn/ops.hpp"
#include "regionedit/rng.hpp"

namespace regionedit::toyzoo {

namespace {

nn::Var relu_conv(const nn::Conv2d& conv, const nn::Var& x, int batch, int h, int w, int* oh,
                  int* ow) {
  return nn::relu(conv(x, batch, h, w, oh, ow));
}

// Per-row affine map rows * scale + shift with 1 x C constants.
nn::Var affine_rows(const nn::Var& x, const nn::Mat& scale, const nn::Mat& shift) {
  const Eigen::Index n = x.rows();
  nn::Mat s = scale.replicate(n, 1);
  nn::Mat b = shift.replicate(n, 1);
  return nn::add(nn::mul(x, nn::constant(std::move(s))), nn::constant(std::move(b)));
}

// 1-D linear interpolation weights (align_corners = false).
std::vector<std::pair<int, double>> interp_weights(int dst, int src, int i) {
  double pos = (i + 0.5) * src / dst - 0.5;
  pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
  const int lo = static_cast<int>(std::floor(pos));
  const int hi = std::min(lo + 1, src - 1);
  const double frac = pos - lo;
  if (hi == lo) return {{lo, 1.0}};
  return {{lo, 1.0 - frac}, {hi, frac}};
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyCodec

ToyCodec::ToyCodec(Config config, std::uint64_t seed) : config_(config) {
  if (config_.factor < 1 || config_.latent_channels < 1 || config_.hidden < 1) {
    throw InvalidArgument("codec", "bad configuration");
  }
  Rng rng(seed, Stream::kInit);
  const int f = config_.factor;
  const int pc = config_.pixel_channels;
  enc_conv_ = nn::Conv2d(params_, "enc.conv", 3, pc, 3, 1, 1, rng);
  enc_patch_ = nn::Linear(params_, "enc.patch", f * f * pc, config_.hidden, rng);
  enc_out_ = nn::Linear(params_, "enc.out", config_.hidden, config_.latent_channels, rng);
  dec_conv1_ = nn::Conv2d(params_, "dec.conv1", config_.latent_channels, config_.hidden, 3, 1, 1, rng);
  dec_conv2_ = nn::Conv2d(params_, "dec.conv2", config_.hidden, config_.hidden, 3, 1, 1, rng);
  dec_patch_ = nn::Linear(params_, "dec.patch", config_.hidden, f * f * pc, rng);
  dec_refine_ = nn::Conv2d(params_, "dec.refine", pc, 3, 3, 1, 1, rng);
  latent_mean_ = params_.add("latent.mean", nn::Mat::Zero(1, config_.latent_channels));
  latent_std_ = params_.add("latent.std", nn::Mat::Ones(1, config_.latent_channels));
}

nn::Var ToyCodec::encode_raw(const nn::Var& images, int batch, int height, int width) const {
  const int f = config_.factor;
  const int pc = config_.pixel_channels;
  int oh = 0;
  int ow = 0;
  nn::Var h = relu_conv(enc_conv_, images, batch, height, width, &oh, &ow);
  const int lh = height / f;
  const int lw = width / f;
  nn::Var patches = nn::gather(h, nn::patchify_map(batch, height, width, pc, f),
                               static_cast<Eigen::Index>(batch) * lh * lw, f * f * pc);
  return enc_out_(nn::relu(enc_patch_(patches)));
}

nn::Var ToyCodec::decode_raw(const nn::Var& latents, int batch, int latent_height,
                             int latent_width) const {
  const int f = config_.factor;
  const int pc = config_.pixel_channels;
  int oh = 0;
  int ow = 0;
  nn::Var d = relu_conv(dec_conv1_, latents, batch, latent_height, latent_width, &oh, &ow);
  d = nn::add(d, relu_conv(dec_conv2_, d, batch, latent_height, latent_width, &oh, &ow));
  nn::Var q = dec_patch_(d);
  const int height = latent_height * f;
  const int width = latent_width * f;
  nn::Var pixels = nn::gather(q, nn::unpatchify_map(batch, height, width, pc, f),
                              static_cast<Eigen::Index>(batch) * height * width, pc);
  return dec_refine_(nn::relu(pixels), batch, height, width, &oh, &ow);
}

nn::Mat ToyCodec::encode_batch(const nn::Mat& images, int batch, int height, int width) const {
  nn::NoGradGuard no_grad;
  nn::Var raw = encode_raw(nn::constant(images), batch, height, width);
  const nn::Mat inv = latent_std_.value().cwiseInverse();
  const nn::Mat shift = -latent_mean_.value().cwiseProduct(inv);
  return affine_rows(raw, inv, shift).value();
}

Latent ToyCodec::encode(const Image& image) const {
  const Shape3 ls = latent_shape_for(image.shape());
  return latent_from_rows(encode_batch(to_rows(image), 1, image.height(), image.width()), ls);
}

nn::Var ToyCodec::decode_rows(const nn::Var& latent_rows, Shape3 latent_shape) const {
  if (latent_shape.channels != config_.latent_channels ||
      latent_rows.rows() != latent_shape.pixels() || latent_rows.cols() != latent_shape.channels) {
    throw ShapeMismatch("toy codec cannot decode latent " + latent_shape.to_string());
  }
  nn::Var raw = affine_rows(latent_rows, latent_std_.value(), latent_mean_.value());
  return decode_raw(raw, 1, latent_shape.height, latent_shape.width);
}

void ToyCodec::set_latent_statistics(const nn::Mat& mean, const nn::Mat& stddev) {
  nn::Var m = latent_mean_;
  nn::Var s = latent_std_;
  m.mutable_value() = mean;
  s.mutable_value() = stddev;
}

// ---------------------------------------------------------------------------
// ToyTextEncoder

ToyTextEncoder::ToyTextEncoder(Config config, std::uint64_t seed) : config_(config) {
  if (config_.dim < 1) throw InvalidArgument("dim", "must be >= 1");
  Rng rng(seed, Stream::kInit);
  colors_ = params_.add("colors", nn::uniform_init(rng, kNumColors + 1, config_.dim, 1.0));
  shapes_ = params_.add("shapes", nn::uniform_init(rng, kNumShapes + 1, config_.dim, 1.0));
}

Embedding ToyTextEncoder::encode(std::string_view prompt) const {
  const ParsedPrompt parsed = parse_prompt(prompt);
  Embedding out;
  if (parsed.empty) {
    out.values.assign(static_cast<std::size_t>(config_.dim), 0.0);
    return out;
  }
  nn::NoGradGuard no_grad;
  nn::Var e = embed_prompts({parsed});
  out.values.assign(e.value().data(), e.value().data() + e.value().size());
  out.normalized = true;
  return out;
}

nn::Var ToyTextEncoder::embed_prompts(const std::vector<ParsedPrompt>& prompts) const {
  const auto n = static_cast<Eigen::Index>(prompts.size());
  nn::Mat pick_color = nn::Mat::Zero(n, kNumColors + 1);
  nn::Mat pick_shape = nn::Mat::Zero(n, kNumShapes + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ParsedPrompt& p = prompts[static_cast<std::size_t>(i)];
    pick_color(i, p.color ? static_cast<int>(*p.color) : kNumColors) = 1.0;
    pick_shape(i, p.shape ? static_cast<int>(*p.shape) : kNumShapes) = 1.0;
  }
  nn::Var sum = nn::add(nn::matmul(nn::constant(std::move(pick_color)), colors_),
                        nn::matmul(nn::constant(std::move(pick_shape)), shapes_));
  return nn::normalize_rows(sum);
}

// ---------------------------------------------------------------------------
// ToyImageEncoder

ToyImageEncoder::ToyImageEncoder(Config config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.channels.empty() || config_.dim < 1) throw InvalidArgument("image_encoder", "bad configuration");
  Rng rng(seed, Stream::kInit);
  int in = 3;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const int stride = i == 0 ? 1 : 2;
    convs_.emplace_back(params_, "conv" + std::to_string(i), in, config_.channels[i], 3, stride, 1,
                        rng);
    in = config_.channels[i];
  }
  head_ = nn::Linear(params_, "head", in, config_.dim, rng);
}

std::vector<nn::Var> ToyImageEncoder::run(const nn::Var& images, int batch, int height, int width,
                                          int* out_height, int* out_width) const {
  std::vector<nn::Var> out;
  nn::Var x = images;
  int h = height;
  int w = width;
  for (const nn::Conv2d& conv : convs_) {
    int oh = 0;
    int ow = 0;
    x = relu_conv(conv, x, batch, h, w, &oh, &ow);
    h = oh;
    w = ow;
    out.push_back(x);
  }
  *out_height = h;
  *out_width = w;
  return out;
}

nn::Var ToyImageEncoder::embed(const nn::Var& images, int batch, int height, int width) const {
  int h = 0;
  int w = 0;
  std::vector<nn::Var> feats = run(images, batch, height, width, &h, &w);
  return head_(nn::group_mean_rows(feats.back(), static_cast<Eigen::Index>(h) * w));
}

std::vector<nn::Var> ToyImageEncoder::features(const nn::Var& images, int batch, int height,
                                               int width) const {
  int h = 0;
  int w = 0;
  return run(images, batch, height, width, &h, &w);
}

// ---------------------------------------------------------------------------
// FeaturePerceptual

FeaturePerceptual::FeaturePerceptual(std::shared_ptr<const ImageEncoder> encoder)
    : encoder_(std::move(encoder)) {
  if (!encoder_) throw ModelLoadError("perceptual metric needs an image encoder");
}

nn::Var FeaturePerceptual::distance(const nn::Var& a, const nn::Var& b, int height,
                                    int width) const {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch("perceptual distance: inputs differ in shape");
  }
  const Eigen::Index pixels = static_cast<Eigen::Index>(height) * width;
  if (pixels <= 0 || a.rows() % pixels != 0) throw ShapeMismatch("perceptual distance: bad plane");
  const int batch = static_cast<int>(a.rows() / pixels);
  // Soft normalization keeps gradients bounded where features vanish.
  constexpr double kEps = 1e-3;
  std::vector<nn::Var> fa = encoder_->features(a, batch, height, width);
  std::vector<nn::Var> fb = encoder_->features(b, batch, height, width);
  nn::Var total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    nn::Var diff = nn::sub(nn::normalize_rows(fa[l], kEps), nn::normalize_rows(fb[l], kEps));
    nn::Var layer = nn::scale(nn::sum(nn::square(diff)), 1.0 / static_cast<double>(fa[l].rows()));
    total = total.defined() ? nn::add(total, layer) : layer;
  }
  return nn::scale(total, 1.0 / static_cast<double>(fa.size()));
}

// ---------------------------------------------------------------------------
// ToyDenoiser

ToyDenoiser::ToyDenoiser(Config config, std::uint64_t seed) : config_(config) {
  if (config_.latent.size() == 0 || config_.hidden < 1 || config_.blocks < 0) {
    throw InvalidArgument("denoiser", "bad configuration");
  }
  Rng rng(seed, Stream::kInit);
  const int d = static_cast<int>(config_.latent.size());
  cond_in_ = nn::Linear(params_, "cond.in", config_.time_dim + config_.cond_dim,
                        config_.cond_hidden, rng);
  cond_out_ = nn::Linear(params_, "cond.out", config_.cond_hidden, config_.cond_hidden, rng);
  input_ = nn::Linear(params_, "input", d, config_.hidden, rng);
  for (int i = 0; i < config_.blocks; ++i) {
    const std::string name = "block" + std::to_string(i);
    Block b;
    b.norm = nn::LayerNorm(params_, name + ".norm", config_.hidden);
    b.scale = nn::Linear(params_, name + ".scale", config_.cond_hidden, config_.hidden, rng, 0.1);
    b.shift = nn::Linear(params_, name + ".shift", config_.cond_hidden, config_.hidden, rng, 0.1);
    b.fc1 = nn::Linear(params_, name + ".fc1", config_.hidden, config_.hidden, rng);
    b.fc2 = nn::Linear(params_, name + ".fc2", config_.hidden, config_.hidden, rng, 0.5);
    blocks_.push_back(std::move(b));
  }
  out_norm_ = nn::LayerNorm(params_, "out.norm", config_.hidden);
  output_ = nn::Linear(params_, "output", config_.hidden, d, rng, 0.0);
}

nn::Var ToyDenoiser::forward(const nn::Var& z, const std::vector<int>& steps,
                             const nn::Var& conditions) const {
  const auto batch = static_cast<Eigen::Index>(steps.size());
  if (z.rows() != batch || conditions.rows() != batch ||
      z.cols() != static_cast<Eigen::Index>(config_.latent.size()) ||
      conditions.cols() != config_.cond_dim) {
    throw ShapeMismatch("denoiser input shapes");
  }
  nn::Mat temb(batch, config_.time_dim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    temb.row(i) = nn::timestep_embedding(steps[static_cast<std::size_t>(i)], config_.time_dim);
  }
  nn::Var c = nn::silu(cond_in_(nn::concat_cols(nn::constant(std::move(temb)), conditions)));
  c = nn::silu(cond_out_(c));
  nn::Var h = input_(z);
  for (const Block& b : blocks_) {
    nn::Var n = b.norm(h);
    n = nn::add(nn::mul(n, nn::add_scalar(b.scale(c), 1.0)), b.shift(c));
    h = nn::add(h, b.fc2(nn::silu(b.fc1(n))));
  }
  return output_(out_norm_(h));
}

std::vector<Latent> ToyDenoiser::predict_noise(const Latent& z_t, int model_step,
                                               std::span<const Embedding> conditions) const {
  if (z_t.shape() != config_.latent) {
    throw ShapeMismatch("denoiser expects latent " + config_.latent.to_string() + ", got " +
                        z_t.shape().to_string());
  }
  const auto batch = static_cast<Eigen::Index>(conditions.size());
  const auto d = static_cast<Eigen::Index>(z_t.size());
  nn::Mat z(batch, d);
  nn::Mat cond(batch, config_.cond_dim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const Embedding& e = conditions[static_cast<std::size_t>(i)];
    if (e.dim() != config_.cond_dim) throw ShapeMismatch("condition embedding dimension");
    z.row(i) = Eigen::Map<const Eigen::RowVectorXd>(z_t.storage().data(), d);
    cond.row(i) = Eigen::Map<const Eigen::RowVectorXd>(e.values.data(), config_.cond_dim);
  }
  nn::NoGradGuard no_grad;
  nn::Var out = forward(nn::constant(std::move(z)),
                        std::vector<int>(static_cast<std::size_t>(batch), model_step),
                        nn::constant(std::move(cond)));
  std::vector<Latent> result;
  result.reserve(static_cast<std::size_t>(batch));
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto row = out.value().row(i);
    result.emplace_back(config_.latent, std::vector<double>(row.data(), row.data() + d));
  }
  return result;
}

// ---------------------------------------------------------------------------
// ToyBackbone

ToyBackbone::ToyBackbone(Config config, std::uint64_t seed) : config_(config) {
  if (config_.patch < 1 || config_.width < 1 || config_.depth < 1 || config_.base_grid < 1) {
    throw InvalidArgument("backbone", "bad configuration");
  }
  Rng rng(seed, Stream::kInit);
  const int p = config_.patch;
  embed_ = nn::Linear(params_, "embed", p * p * 3, config_.width, rng);
  class_token_ = params_.add("class_token", nn::uniform_init(rng, 1, config_.width, 0.1));
  const int tokens = config_.base_grid * config_.base_grid + 1;
  position_ = params_.add("position", nn::uniform_init(rng, tokens, config_.width, 0.1));
  for (int i = 0; i < config_.depth; ++i) {
    blocks_.emplace_back(params_, "block" + std::to_string(i), config_.width, config_.heads,
                         config_.mlp_width, rng);
  }
}

std::vector<nn::Var> ToyBackbone::activations(const nn::Var& images, int batch, int height,
                                              int width, std::span<const int> layers) const {
  const int p = config_.patch;
  if (height % p != 0 || width % p != 0) throw ShapeMismatch("backbone input not patch aligned");
  const int gh = height / p;
  const int gw = width / p;
  const int grid = gh * gw;
  const int tokens = grid + 1;
  const int w = config_.width;
  int deepest = 0;
  for (int l : layers) {
    if (l < 1 || l > config_.depth) throw InvalidArgument("layers", "out of range");
    deepest = std::max(deepest, l);
  }

  nn::Var patches = nn::gather(images, nn::patchify_map(batch, height, width, 3, p),
                               static_cast<Eigen::Index>(batch) * grid, p * p * 3);
  nn::Var seq = nn::concat_rows(class_token_, embed_(patches));
  auto order = std::make_shared<std::vector<std::int32_t>>();
  order->reserve(static_cast<std::size_t>(batch) * tokens * w);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < tokens; ++t) {
      const int src = t == 0 ? 0 : 1 + b * grid + (t - 1);
      for (int c = 0; c < w; ++c) order->push_back(src * w + c);
    }
  }
  nn::Var x = nn::gather(seq, order, static_cast<Eigen::Index>(batch) * tokens, w);

  nn::Var pos = position_;
  const int g0 = config_.base_grid;
  if (gh != g0 || gw != g0) {
    nn::Mat interp = nn::Mat::Zero(tokens, g0 * g0 + 1);
    interp(0, 0) = 1.0;
    for (int y = 0; y < gh; ++y) {
      for (int xx = 0; xx < gw; ++xx) {
        for (auto [sy, wy] : interp_weights(gh, g0, y)) {
          for (auto [sx, wx] : interp_weights(gw, g0, xx)) {
            interp(1 + y * gw + xx, 1 + sy * g0 + sx) += wy * wx;
          }
        }
      }
    }
    pos = nn::matmul(nn::constant(std::move(interp)), position_);
  }
  auto tile = std::make_shared<std::vector<std::int32_t>>();
  tile->reserve(static_cast<std::size_t>(batch) * tokens * w);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < tokens * w; ++i) tile->push_back(i);
  }
  x = nn::add(x, nn::gather(pos, tile, static_cast<Eigen::Index>(batch) * tokens, w));

  std::vector<nn::Var> by_layer(static_cast<std::size_t>(deepest) + 1);
  for (int l = 1; l <= deepest; ++l) {
    x = blocks_[static_cast<std::size_t>(l - 1)](x, batch, tokens);
    by_layer[static_cast<std::size_t>(l)] = x;
  }
  std::vector<nn::Var> out;
  out.reserve(layers.size());
  for (int l : layers) out.push_back(by_layer[static_cast<std::size_t>(l)]);
  return out;
}

CalibrationConfig toy_calibration_config() {
  CalibrationConfig config;
  config.extraction_layers = {3, 7, 9};
  config.embed_dim = 64;
  config.patch_size = 4;
  config.threshold = 150;
  config.resize = ResizePolicy::kResize;
  return config;
}

}  // namespace regionedit::toyzoo
