#include "regionedit/guidance.hpp"

#include <cmath>
#include <optional>

#include "regionedit/nn/ops.hpp"

namespace regionedit {

namespace {

void require_same_shape(const Latent& a, const Latent& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + a.shape().to_string() + " vs " +
                        b.shape().to_string());
  }
}

void require_non_negative(double v, const char* field) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument(field, "must be finite and >= 0");
}

// (H*W) x C constant holding the mask (or its complement) per channel.
nn::Mat mask_rows(const RegionMask& mask, int channels, bool invert) {
  nn::Mat m(static_cast<Eigen::Index>(mask.size()), channels);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double v = (mask[p] != 0) != invert ? 1.0 : 0.0;
    m.row(static_cast<Eigen::Index>(p)).setConstant(v);
  }
  return m;
}

void check_plane(const RegionMask& mask, Shape3 shape) {
  if (mask.height() != shape.height || mask.width() != shape.width) {
    throw ShapeMismatch("mask " + mask.shape().to_string() + " vs image " + shape.to_string());
  }
}

}  // namespace

void GuidanceParams::validate() const {
  require_non_negative(cfg_scale, "cfg_scale");
  require_non_negative(grad_scale, "grad_scale");
  require_non_negative(lambda1, "lambda1");
  require_non_negative(lambda2, "lambda2");
}

Latent combine_cfg(const Latent& eps_uncond, const Latent& eps_cond, double cfg_scale) {
  require_same_shape(eps_uncond, eps_cond, "combine_cfg");
  Latent out(eps_uncond.shape());
  // Weighted form so that s=0 and s=1 return the inputs bit-exactly.
  const double keep = 1.0 - cfg_scale;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = keep * eps_uncond[i] + cfg_scale * eps_cond[i];
  }
  return out;
}

nn::Var clip_guidance_graph(const nn::Var& x_hat, Shape3 shape, const Embedding& target,
                            const RegionMask& mask, const ImageEncoder& encoder) {
  check_plane(mask, shape);
  const Embedding unit = target.unit();
  if (unit.dim() != encoder.dim()) throw ShapeMismatch("target embedding dimension mismatch");
  nn::Var masked = nn::mul(x_hat, nn::constant(mask_rows(mask, shape.channels, false)));
  nn::Var emb = encoder.embed(masked, 1, shape.height, shape.width);
  if (!(emb.value().norm() > 0.0)) throw DegenerateEmbedding("image embedding has zero norm");
  nn::Mat t(1, unit.dim());
  for (int i = 0; i < unit.dim(); ++i) t(0, i) = unit.values[static_cast<std::size_t>(i)];
  nn::Var cosine = nn::row_dot(nn::normalize_rows(emb), nn::constant(std::move(t)));
  return nn::add_scalar(nn::scale(cosine, -1.0), 1.0);
}

nn::Var nerp_graph(const Image& x0, const nn::Var& x_hat, const RegionMask& mask, double lambda1,
                   double lambda2, const PerceptualMetric& perceptual) {
  check_plane(mask, x0.shape());
  const nn::Var outside = nn::constant(mask_rows(mask, x0.channels(), true));
  const nn::Var a = nn::constant(to_rows(apply_mask(x0, mask, true)));
  const nn::Var b = nn::mul(x_hat, outside);
  nn::Var total = nn::constant(nn::Mat::Zero(1, 1));
  if (lambda1 != 0.0) {
    total = nn::add(total, nn::scale(perceptual.distance(a, b, x0.height(), x0.width()), lambda1));
  }
  if (lambda2 != 0.0) total = nn::add(total, nn::scale(nn::mse(a, b), lambda2));
  return total;
}

double clip_guidance(const Image& x_hat, const Embedding& target, const RegionMask& mask,
                     const ImageEncoder& encoder) {
  nn::NoGradGuard no_grad;
  return clip_guidance_graph(nn::constant(to_rows(x_hat)), x_hat.shape(), target, mask, encoder)
      .item();
}

double nerp_loss(const Image& x0, const Image& x_hat, const RegionMask& mask, double lambda1,
                 double lambda2, const PerceptualMetric& perceptual) {
  if (x0.shape() != x_hat.shape()) throw ShapeMismatch("nerp_loss: image shapes differ");
  nn::NoGradGuard no_grad;
  return nerp_graph(x0, nn::constant(to_rows(x_hat)), mask, lambda1, lambda2, perceptual).item();
}

double total_objective(const Image& x0, const Image& x_hat, const Embedding& target,
                       const RegionMask& mask, const GuidanceParams& params,
                       const ImageEncoder& encoder, const PerceptualMetric& perceptual) {
  return clip_guidance(x_hat, target, mask, encoder) +
         nerp_loss(x0, x_hat, mask, params.lambda1, params.lambda2, perceptual);
}

ObjectiveEvaluation evaluate_objective(const Latent& latent, const Codec& codec, const Image& x0,
                                       const Embedding& target, const RegionMask& mask,
                                       const GuidanceParams& params, const ImageEncoder& encoder,
                                       const PerceptualMetric& perceptual, ObjectiveTerms terms,
                                       bool with_gradient) {
  std::optional<nn::NoGradGuard> no_grad;
  if (!with_gradient) no_grad.emplace();
  nn::Var z = with_gradient ? nn::parameter(to_rows(latent)) : nn::constant(to_rows(latent));
  const Shape3 image_shape = codec.image_shape_for(latent.shape());
  if (image_shape != x0.shape()) {
    throw ShapeMismatch("decoded shape " + image_shape.to_string() + " vs input " +
                        x0.shape().to_string());
  }
  nn::Var x_hat = codec.decode_rows(z, latent.shape());

  ObjectiveEvaluation out;
  nn::Var total = nn::constant(nn::Mat::Zero(1, 1));
  if (terms.clip) {
    nn::Var clip = clip_guidance_graph(x_hat, image_shape, target, mask, encoder);
    out.clip_loss = clip.item();
    total = nn::add(total, clip);
  }
  if (terms.nerp) {
    nn::Var nerp = nerp_graph(x0, x_hat, mask, params.lambda1, params.lambda2, perceptual);
    out.nerp_loss = nerp.item();
    total = nn::add(total, nerp);
  }
  out.total = total.item();
  if (with_gradient) {
    total.backward();
    out.gradient = latent_from_rows(z.grad_or_zero(), latent.shape());
  }
  return out;
}

Latent shift_mean(const Latent& mu, const Latent& variance, const Latent& grad, double grad_scale,
                  int step) {
  require_same_shape(mu, variance, "shift_mean");
  require_same_shape(mu, grad, "shift_mean");
  Latent out(mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(grad[i])) throw GuidanceDivergence(step, "non-finite loss gradient");
    out[i] = mu[i] - grad_scale * variance[i] * grad[i];
  }
  return out;
}

}  // namespace regionedit
