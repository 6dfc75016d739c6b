#pragma once

#include "regionedit/codec.hpp"
#include "regionedit/models.hpp"
#include "regionedit/nn/autodiff.hpp"
#include "regionedit/tensor.hpp"

namespace regionedit {

struct GuidanceParams {
  double cfg_scale = 5.0;     // classifier-free guidance scale
  double grad_scale = 150.0;  // multiplier on the loss-gradient mean shift
  double lambda1 = 0.5;       // perceptual term of the preservation loss
  double lambda2 = 0.5;       // MSE term of the preservation loss

  // Throws InvalidArgument naming the offending field.
  void validate() const;

  friend bool operator==(const GuidanceParams&, const GuidanceParams&) = default;
};

// eps_uncond + cfg_scale * (eps_cond - eps_uncond)
Latent combine_cfg(const Latent& eps_uncond, const Latent& eps_cond, double cfg_scale);

// 1 - cos(E_I(x_hat (.) m), target). Lower is better; bounded in [0, 2].
double clip_guidance(const Image& x_hat, const Embedding& target, const RegionMask& mask,
                     const ImageEncoder& encoder);

// lambda1 * perceptual(a, b) + lambda2 * MSE(a, b) with a = x0 (.) (1-m),
// b = x_hat (.) (1-m). A zero lambda skips its term entirely.
double nerp_loss(const Image& x0, const Image& x_hat, const RegionMask& mask, double lambda1,
                 double lambda2, const PerceptualMetric& perceptual);

// clip_guidance + nerp_loss.
double total_objective(const Image& x0, const Image& x_hat, const Embedding& target,
                       const RegionMask& mask, const GuidanceParams& params,
                       const ImageEncoder& encoder, const PerceptualMetric& perceptual);

// Graph-level pieces, shared by the value functions above and the gradient
// path. Images are (H*W) x 3 rows.
nn::Var clip_guidance_graph(const nn::Var& x_hat, Shape3 shape, const Embedding& target,
                            const RegionMask& mask, const ImageEncoder& encoder);
nn::Var nerp_graph(const Image& x0, const nn::Var& x_hat, const RegionMask& mask, double lambda1,
                   double lambda2, const PerceptualMetric& perceptual);

struct ObjectiveEvaluation {
  double clip_loss = 0;
  double nerp_loss = 0;
  double total = 0;
  Latent gradient;  // d(total)/d(latent); empty when not requested
};

struct ObjectiveTerms {
  bool clip = true;
  bool nerp = true;
};

// Decodes `latent` through `codec`, evaluates the selected loss terms on
// the decoded image and, if `with_gradient`, backpropagates to the latent.
ObjectiveEvaluation evaluate_objective(const Latent& latent, const Codec& codec, const Image& x0,
                                       const Embedding& target, const RegionMask& mask,
                                       const GuidanceParams& params, const ImageEncoder& encoder,
                                       const PerceptualMetric& perceptual, ObjectiveTerms terms,
                                       bool with_gradient);

// mu - grad_scale * variance * grad: a step down the loss. Throws
// GuidanceDivergence (tagged with `step`) on a non-finite gradient.
Latent shift_mean(const Latent& mu, const Latent& variance, const Latent& grad, double grad_scale,
                  int step = 0);

}  // namespace regionedit
