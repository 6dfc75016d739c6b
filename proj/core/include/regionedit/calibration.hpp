#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "regionedit/codec.hpp"
#include "regionedit/models.hpp"
#include "regionedit/nn/layers.hpp"
#include "regionedit/tensor.hpp"

namespace regionedit {

struct CalibrationConfig {
  std::vector<int> extraction_layers{3, 7, 9};
  int embed_dim = 64;    // decoder width F
  int patch_size = 16;   // backbone token patch size P
  int threshold = 150;   // K on the 0..255 soft-mask scale
  ResizePolicy resize = ResizePolicy::kResize;

  void validate() const;
};

// Visual transformer whose intermediate token activations feed the
// segmentation decoder. Token 0 of every sequence is the class token.
class VisualBackbone {
 public:
  virtual ~VisualBackbone() = default;
  virtual int patch_size() const = 0;
  virtual int width() const = 0;
  virtual int depth() const = 0;
  // One (batch*(1+tokens)) x width() Var per requested layer (1-based, in
  // the order given).
  virtual std::vector<nn::Var> activations(const nn::Var& images, int batch, int height,
                                           int width, std::span<const int> layers) const = 0;
};

// Thin conditional decoder. Activations are visited deepest first: each is
// reduced to the decoder width and added to the running activation before
// the next transformer block; the first is modulated by the text
// condition (per-channel scale and shift). A per-token linear projection
// of the final tokens (class token dropped) yields a P x P logit patch.
class SegmentationDecoder {
 public:
  struct Shape {
    int backbone_width = 32;
    int condition_dim = 32;
    int embed_dim = 64;
    int layers = 3;
    int heads = 2;
    int mlp_width = 64;
    int patch_size = 4;
  };

  SegmentationDecoder(Shape shape, Rng& rng);

  // activations: as returned by VisualBackbone (shallow to deep).
  // conditions: batch x condition_dim. Returns (batch*H*W) x 1 logits.
  nn::Var logits(const std::vector<nn::Var>& activations, const nn::Var& conditions, int batch,
                 int height, int width) const;

  const Shape& shape() const noexcept { return shape_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  Shape shape_;
  nn::ParameterSet params_;
  std::vector<nn::Linear> reduce_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::Linear film_scale_;
  nn::Linear film_shift_;
  nn::Linear project_;
};

class Segmenter {
 public:
  Segmenter(std::shared_ptr<const VisualBackbone> backbone,
            std::shared_ptr<const SegmentationDecoder> decoder, CalibrationConfig config);

  nn::Var logits(const nn::Var& images, int batch, int height, int width,
                 const nn::Var& conditions) const;
  // Soft map on 0..255 (logistic squashing of the logits), same plane as
  // the image.
  SoftMask segment(const Image& image, const Embedding& condition) const;

  const CalibrationConfig& config() const noexcept { return config_; }
  const VisualBackbone& backbone() const noexcept { return *backbone_; }
  const SegmentationDecoder& decoder() const noexcept { return *decoder_; }

 private:
  std::shared_ptr<const VisualBackbone> backbone_;
  std::shared_ptr<const SegmentationDecoder> decoder_;
  CalibrationConfig config_;
};

// Encodes the positioning prompt and segments the image with it.
SoftMask segment(const Image& image, std::string_view positioning_text,
                 const TextEncoder& text_encoder, const Segmenter& segmenter);

// Pixel is 1 iff soft >= K. K may be 0..255; 256 is accepted as an explicit
// "select nothing" override.
RegionMask threshold_mask(const SoftMask& soft, int threshold);

}  // namespace regionedit
