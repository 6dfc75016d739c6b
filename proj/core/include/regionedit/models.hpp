#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regionedit/nn/autodiff.hpp"
#include "regionedit/schedule.hpp"
#include "regionedit/tensor.hpp"

namespace regionedit {

class Codec;
class Segmenter;

struct Embedding {
  std::vector<double> values;
  bool normalized = false;

  int dim() const noexcept { return static_cast<int>(values.size()); }
  double norm() const;
  // Unit-norm copy. Throws DegenerateEmbedding for a zero vector.
  Embedding unit() const;
};

double cosine_similarity(const Embedding& a, const Embedding& b);

// Text side of the joint text-image embedding space. The empty prompt maps
// to the null condition used for classifier-free guidance.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual Embedding encode(std::string_view prompt) const = 0;
};

// Image side of the joint embedding space. Inputs are NHWC rows
// ((batch*H*W) x 3) so the encoder can sit inside a differentiable graph.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual int dim() const = 0;
  // batch x dim, not normalized.
  virtual nn::Var embed(const nn::Var& images, int batch, int height, int width) const = 0;
  // Intermediate activations for perceptual distances, one Var per layer,
  // each (batch*h_l*w_l) x c_l.
  virtual std::vector<nn::Var> features(const nn::Var& images, int batch, int height,
                                        int width) const = 0;

  Embedding embed_image(const Image& image) const;
};

// Perceptual distance between two equally-shaped images (NHWC rows).
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual nn::Var distance(const nn::Var& a, const nn::Var& b, int height, int width) const = 0;
  double distance(const Image& a, const Image& b) const;
};

// Time- and text-conditioned noise predictor eps_theta(z_t, t | c).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Shape3 latent_shape() const = 0;
  // One prediction per condition, all at the same (z_t, t). `model_step` is
  // the training-schedule timestep.
  virtual std::vector<Latent> predict_noise(const Latent& z_t, int model_step,
                                            std::span<const Embedding> conditions) const = 0;
};

struct ComponentInfo {
  std::string name;
  std::string version;
  std::string content_hash;
};

// The pluggable models the pipeline runs on. The eval_* pair scores edits
// and may hold different weights from the pair that guides them.
struct ModelBundle {
  std::shared_ptr<const Denoiser> denoiser;
  std::shared_ptr<const Codec> codec;
  std::shared_ptr<const TextEncoder> text_encoder;
  std::shared_ptr<const ImageEncoder> image_encoder;
  std::shared_ptr<const ImageEncoder> eval_image_encoder;
  std::shared_ptr<const TextEncoder> eval_text_encoder;
  std::shared_ptr<const PerceptualMetric> perceptual;
  std::shared_ptr<const Segmenter> segmenter;
  NoiseSchedule training_schedule = default_training_schedule();
  Shape3 image_shape{32, 32, 3};
  std::vector<ComponentInfo> components;

  // Throws ModelLoadError if any slot is empty or the codec's latent shape
  // disagrees with the denoiser's.
  void validate() const;
};

// NHWC row view helpers.
nn::Mat to_rows(const Image& image);
nn::Mat to_rows(const Latent& latent);
Image image_from_rows(const nn::Mat& rows, Shape3 shape);
Latent latent_from_rows(const nn::Mat& rows, Shape3 shape);

}  // namespace regionedit
