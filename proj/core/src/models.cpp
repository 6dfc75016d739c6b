#include "regionedit/models.hpp"

#include <cmath>

#include "regionedit/codec.hpp"
#include "regionedit/nn/ops.hpp"

namespace regionedit {

double Embedding::norm() const {
  double sq = 0;
  for (double v : values) sq += v * v;
  return std::sqrt(sq);
}

Embedding Embedding::unit() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateEmbedding("embedding has zero norm");
  Embedding out{values, true};
  for (double& v : out.values) v /= n;
  return out;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw ShapeMismatch("embedding dimensions differ");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateEmbedding("cosine similarity of a zero vector");
  double dot = 0;
  for (int i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
  return dot / (na * nb);
}

Embedding ImageEncoder::embed_image(const Image& image) const {
  nn::NoGradGuard no_grad;
  nn::Var e = embed(nn::constant(to_rows(image)), 1, image.height(), image.width());
  Embedding out;
  out.values.assign(e.value().data(), e.value().data() + e.value().size());
  return out;
}

double PerceptualMetric::distance(const Image& a, const Image& b) const {
  if (a.shape() != b.shape()) throw ShapeMismatch("perceptual distance: image shapes differ");
  nn::NoGradGuard no_grad;
  return distance(nn::constant(to_rows(a)), nn::constant(to_rows(b)), a.height(), a.width())
      .item();
}

void ModelBundle::validate() const {
  if (!denoiser || !codec || !text_encoder || !image_encoder || !eval_image_encoder ||
      !eval_text_encoder || !perceptual || !segmenter) {
    throw ModelLoadError("model bundle is missing a component");
  }
  const Shape3 latent = codec->latent_shape_for(image_shape);
  if (latent != denoiser->latent_shape()) {
    throw ModelLoadError("codec latent shape " + latent.to_string() +
                         " disagrees with denoiser latent shape " +
                         denoiser->latent_shape().to_string());
  }
  if (text_encoder->dim() != image_encoder->dim() ||
      eval_text_encoder->dim() != eval_image_encoder->dim()) {
    throw ModelLoadError("text and image embedding dimensions disagree");
  }
}

nn::Mat to_rows(const Image& image) {
  return Eigen::Map<const nn::Mat>(image.storage().data(), image.height() * image.width(),
                                   image.channels());
}

nn::Mat to_rows(const Latent& latent) {
  return Eigen::Map<const nn::Mat>(latent.storage().data(), latent.height() * latent.width(),
                                   latent.channels());
}

Image image_from_rows(const nn::Mat& rows, Shape3 shape) {
  if (static_cast<std::size_t>(rows.size()) != shape.size()) {
    throw ShapeMismatch("rows do not match image shape " + shape.to_string());
  }
  return Image(shape, std::vector<double>(rows.data(), rows.data() + rows.size()));
}

Latent latent_from_rows(const nn::Mat& rows, Shape3 shape) {
  if (static_cast<std::size_t>(rows.size()) != shape.size()) {
    throw ShapeMismatch("rows do not match latent shape " + shape.to_string());
  }
  return Latent(shape, std::vector<double>(rows.data(), rows.data() + rows.size()));
}

}  // namespace regionedit
