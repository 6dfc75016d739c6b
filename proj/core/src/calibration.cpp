#include "regionedit/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "regionedit/nn/ops.hpp"

namespace regionedit {

void CalibrationConfig::validate() const {
  if (extraction_layers.empty()) throw InvalidArgument("extraction_layers", "must not be empty");
  for (int layer : extraction_layers) {
    if (layer < 1) throw InvalidArgument("extraction_layers", "layers are 1-based");
  }
  if (embed_dim < 1) throw InvalidArgument("embed_dim", "must be >= 1");
  if (patch_size < 1) throw InvalidArgument("patch_size", "must be >= 1");
  if (threshold < 0 || threshold > 255) throw InvalidArgument("threshold", "must lie in [0, 255]");
}

SegmentationDecoder::SegmentationDecoder(Shape shape, Rng& rng) : shape_(shape) {
  for (int i = 0; i < shape_.layers; ++i) {
    const std::string name = "decoder." + std::to_string(i);
    reduce_.emplace_back(params_, name + ".reduce", shape_.backbone_width, shape_.embed_dim, rng);
    blocks_.emplace_back(params_, name + ".block", shape_.embed_dim, shape_.heads,
                         shape_.mlp_width, rng);
  }
  film_scale_ = nn::Linear(params_, "film.scale", shape_.condition_dim, shape_.embed_dim, rng);
  film_shift_ = nn::Linear(params_, "film.shift", shape_.condition_dim, shape_.embed_dim, rng);
  project_ = nn::Linear(params_, "project", shape_.embed_dim,
                        shape_.patch_size * shape_.patch_size, rng);
}

nn::Var SegmentationDecoder::logits(const std::vector<nn::Var>& activations,
                                    const nn::Var& conditions, int batch, int height,
                                    int width) const {
  if (static_cast<int>(activations.size()) != shape_.layers) {
    throw InvalidArgument("activations", "decoder expects " + std::to_string(shape_.layers) +
                                             " activation maps");
  }
  const int p = shape_.patch_size;
  const int grid = (height / p) * (width / p);
  const int tokens = grid + 1;
  nn::Var a;
  for (int i = 0; i < shape_.layers; ++i) {
    const nn::Var& act = activations[static_cast<std::size_t>(shape_.layers - 1 - i)];
    nn::Var reduced = reduce_[static_cast<std::size_t>(i)](act);
    if (i == 0) {
      // Feature-wise modulation by the text condition, broadcast over tokens.
      nn::Var gain = nn::add_scalar(nn::repeat_rows(film_scale_(conditions), tokens), 1.0);
      nn::Var bias = nn::repeat_rows(film_shift_(conditions), tokens);
      a = nn::add(nn::mul(reduced, gain), bias);
    } else {
      a = nn::add(a, reduced);
    }
    a = blocks_[static_cast<std::size_t>(i)](a, batch, tokens);
  }
  // Drop the class token of each sequence.
  auto keep = std::make_shared<std::vector<std::int32_t>>();
  keep->reserve(static_cast<std::size_t>(batch) * grid * shape_.embed_dim);
  for (int b = 0; b < batch; ++b) {
    for (int t = 1; t < tokens; ++t) {
      for (int c = 0; c < shape_.embed_dim; ++c) {
        keep->push_back((b * tokens + t) * shape_.embed_dim + c);
      }
    }
  }
  nn::Var patches = gather(a, keep, static_cast<Eigen::Index>(batch) * grid, shape_.embed_dim);
  nn::Var projected = project_(patches);  // (batch*grid) x p*p
  return nn::gather(projected, nn::unpatchify_map(batch, height, width, 1, p),
                    static_cast<Eigen::Index>(batch) * height * width, 1);
}

Segmenter::Segmenter(std::shared_ptr<const VisualBackbone> backbone,
                     std::shared_ptr<const SegmentationDecoder> decoder, CalibrationConfig config)
    : backbone_(std::move(backbone)), decoder_(std::move(decoder)), config_(std::move(config)) {
  config_.validate();
  if (!backbone_ || !decoder_) throw ModelLoadError("segmenter needs a backbone and a decoder");
  for (int layer : config_.extraction_layers) {
    if (layer > backbone_->depth()) {
      throw InvalidArgument("extraction_layers", "layer " + std::to_string(layer) +
                                                     " exceeds backbone depth " +
                                                     std::to_string(backbone_->depth()));
    }
  }
  if (backbone_->patch_size() != config_.patch_size ||
      decoder_->shape().patch_size != config_.patch_size) {
    throw ModelLoadError("segmenter patch sizes disagree");
  }
  if (decoder_->shape().embed_dim != config_.embed_dim ||
      decoder_->shape().layers != static_cast<int>(config_.extraction_layers.size())) {
    throw ModelLoadError("segmentation decoder does not match the calibration config");
  }
}

nn::Var Segmenter::logits(const nn::Var& images, int batch, int height, int width,
                          const nn::Var& conditions) const {
  auto acts = backbone_->activations(images, batch, height, width, config_.extraction_layers);
  return decoder_->logits(acts, conditions, batch, height, width);
}

SoftMask Segmenter::segment(const Image& image, const Embedding& condition) const {
  const int p = config_.patch_size;
  Image input = image;
  const bool fits = image.height() % p == 0 && image.width() % p == 0;
  if (!fits) {
    if (config_.resize == ResizePolicy::kReject) {
      throw InvalidArgument("image", "size " + image.shape().to_string() +
                                         " is not a multiple of the patch size " +
                                         std::to_string(p));
    }
    input = resize_bilinear(image, (image.height() + p - 1) / p * p,
                            (image.width() + p - 1) / p * p);
  }
  if (condition.dim() != decoder_->shape().condition_dim) {
    throw ShapeMismatch("condition embedding dimension mismatch");
  }
  nn::NoGradGuard no_grad;
  nn::Mat cond(1, condition.dim());
  for (int i = 0; i < condition.dim(); ++i) cond(0, i) = condition.values[static_cast<std::size_t>(i)];
  nn::Var out = logits(nn::constant(to_rows(input)), 1, input.height(), input.width(),
                       nn::constant(std::move(cond)));
  SoftMask soft(PlaneShape{input.height(), input.width()});
  for (std::size_t i = 0; i < soft.size(); ++i) {
    soft[i] = 255.0 / (1.0 + std::exp(-out.value()(static_cast<Eigen::Index>(i), 0)));
  }
  if (fits) return soft;
  // Back to the caller's plane.
  Image as_image(Shape3{soft.height(), soft.width(), 1}, soft.storage());
  Image resized = resize_bilinear(as_image, image.height(), image.width());
  return SoftMask(PlaneShape{image.height(), image.width()}, resized.storage());
}

SoftMask segment(const Image& image, std::string_view positioning_text,
                 const TextEncoder& text_encoder, const Segmenter& segmenter) {
  return segmenter.segment(image, text_encoder.encode(positioning_text));
}

RegionMask threshold_mask(const SoftMask& soft, int threshold) {
  if (threshold < 0 || threshold > 256) {
    throw InvalidArgument("threshold", "must lie in [0, 255] (256 selects nothing)");
  }
  RegionMask mask(soft.shape());
  for (std::size_t i = 0; i < soft.size(); ++i) mask[i] = soft[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace regionedit
