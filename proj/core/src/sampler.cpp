#include "regionedit/sampler.hpp"

#include <chrono>
#include <cmath>

#include "regionedit/calibration.hpp"
#include "regionedit/codec.hpp"
#include "regionedit/rng.hpp"

namespace regionedit {

namespace {

double l2_norm(const Latent& z) {
  double sq = 0;
  for (double v : z.storage()) sq += v * v;
  return std::sqrt(sq);
}

Image prepare_input(const Image& x0, const EditParams& params, const ModelBundle& models) {
  if (x0.channels() != 3) throw InvalidArgument("image", "expected 3 channels");
  if (x0.height() == models.image_shape.height && x0.width() == models.image_shape.width) {
    return x0;
  }
  if (params.resize == ResizePolicy::kReject) {
    throw InvalidArgument("image", "size " + x0.shape().to_string() +
                                       " does not match the model geometry " +
                                       models.image_shape.to_string());
  }
  return resize_bilinear(x0, models.image_shape.height, models.image_shape.width);
}

// Denoiser prediction combined with classifier-free guidance.
Latent guided_noise(const ModelBundle& models, const Latent& z, int model_step,
                    const Embedding& null_condition, const Embedding& condition,
                    double cfg_scale) {
  const Embedding conditions[] = {null_condition, condition};
  std::vector<Latent> eps = models.denoiser->predict_noise(z, model_step, conditions);
  return combine_cfg(eps[0], eps[1], cfg_scale);
}

Latent gaussian_step(const Latent& mean, const Latent& stddev, Rng& rng) {
  Latent out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + stddev[i] * rng.normal();
  return out;
}

}  // namespace

void EditParams::validate() const {
  if (steps < 1) throw InvalidArgument("steps", "must be >= 1");
  if (threshold < 0 || threshold > 256) {
    throw InvalidArgument("threshold", "must lie in [0, 255] (256 forces an empty mask)");
  }
  guidance.validate();
}

Latent sample_initial_latent(Shape3 shape, std::uint64_t seed) {
  Rng rng(seed, Stream::kInitialLatent);
  return rng.normal_latent(shape);
}

EditResult run_edit(const Image& x0, std::string_view positioning_text,
                    std::string_view target_text, const EditParams& params,
                    const ModelBundle& models, const StepObserver& observer) {
  params.validate();
  models.validate();
  const Image input = prepare_input(x0, params, models);
  SoftMask soft = segment(input, positioning_text, *models.text_encoder, *models.segmenter);
  RegionMask mask = threshold_mask(soft, params.threshold);
  EditResult result = run_edit_with_mask(input, mask, target_text, params, models, observer);
  result.soft_mask = std::move(soft);
  return result;
}

EditResult run_edit_with_mask(const Image& x0_in, const RegionMask& mask,
                              std::string_view target_text, const EditParams& params,
                              const ModelBundle& models, const StepObserver& observer) {
  const auto started = std::chrono::steady_clock::now();
  params.validate();
  models.validate();
  const Image x0 = prepare_input(x0_in, params, models);
  if (mask.height() != x0.height() || mask.width() != x0.width()) {
    throw ShapeMismatch("mask " + mask.shape().to_string() + " vs image " + x0.shape().to_string());
  }
  if (target_text.empty()) throw InvalidArgument("target_text", "must not be empty");

  const Codec& codec = *models.codec;
  const Shape3 latent_shape = codec.latent_shape_for(x0.shape());
  const Latent z0 = codec.encode(x0);
  const LatentMask latent_mask = mask_to_latent(mask, {latent_shape.height, latent_shape.width});
  const bool no_op = area_fraction(mask) == 0.0;

  const NoiseSchedule schedule = respace(models.training_schedule, params.steps);
  const Embedding target = models.text_encoder->encode(target_text);
  const Embedding null_condition = models.text_encoder->encode("");

  const GuidanceParams& guidance = params.guidance;
  ObjectiveTerms terms;
  // The text loss is undefined on an empty region; with an empty mask the
  // blend discards the generated latent anyway.
  terms.clip = !no_op;
  terms.nerp = params.preservation_loss && (guidance.lambda1 > 0 || guidance.lambda2 > 0);
  const bool use_gradient = guidance.grad_scale > 0 && (terms.clip || terms.nerp);

  Rng reverse_rng(params.seed, Stream::kReverseNoise);
  Rng chain_rng(params.seed, Stream::kInputChain);
  Latent z = sample_initial_latent(latent_shape, params.seed);

  EditResult result;
  result.params = params;
  if (params.record_trajectory) result.trace.reserve(static_cast<std::size_t>(params.steps));

  for (int t = schedule.steps(); t >= 1; --t) {
    const Latent eps = guided_noise(models, z, schedule.model_step(t), null_condition, target,
                                    guidance.cfg_scale);
    PosteriorStats post = posterior_stats(z, eps, t, schedule);

    ObjectiveEvaluation objective;
    if (terms.clip || terms.nerp) {
      objective = evaluate_objective(post.predicted_clean, codec, x0, target, mask, guidance,
                                     *models.image_encoder, *models.perceptual, terms,
                                     use_gradient);
    }
    Latent mean = std::move(post.mean);
    if (use_gradient) {
      Latent variance(post.stddev.shape());
      for (std::size_t i = 0; i < variance.size(); ++i) {
        variance[i] = post.stddev[i] * post.stddev[i];
      }
      mean = shift_mean(mean, variance, objective.gradient, guidance.grad_scale, t);
    }
    Latent guided = gaussian_step(mean, post.stddev, reverse_rng);

    Latent chain;
    Latent next;
    if (params.blend) {
      chain = forward_noise(z0, t - 1, chain_rng.normal_latent(latent_shape), schedule);
      next = Latent(latent_shape);
      const int c = latent_shape.channels;
      for (std::size_t p = 0; p < latent_mask.size(); ++p) {
        const double m = latent_mask[p] != 0 ? 1.0 : 0.0;
        for (int k = 0; k < c; ++k) {
          const std::size_t i = p * static_cast<std::size_t>(c) + static_cast<std::size_t>(k);
          next[i] = guided[i] * m + chain[i] * (1.0 - m);
        }
      }
    } else {
      next = guided;
    }
    // A norm that overflows is as unusable as a NaN element.
    const double norm = l2_norm(next);
    if (!next.all_finite() || !std::isfinite(norm)) {
      throw GuidanceDivergence(t, "latent became non-finite");
    }

    TraceEntry entry{t, objective.clip_loss, objective.nerp_loss, norm};
    if (params.record_trajectory) result.trace.push_back(entry);
    if (observer) {
      StepState state;
      state.t = t;
      state.guided = &guided;
      state.blended = &next;
      state.input_chain = params.blend ? &chain : nullptr;
      state.trace = &entry;
      observer(state);
    }
    z = std::move(next);
  }

  result.output = codec.decode(z);
  result.mask = mask;
  result.latent_mask = latent_mask;
  result.no_op = no_op;
  result.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

Image run_unguided(std::string_view prompt, const EditParams& params, const ModelBundle& models) {
  params.validate();
  models.validate();
  const Shape3 latent_shape = models.codec->latent_shape_for(models.image_shape);
  const NoiseSchedule schedule = respace(models.training_schedule, params.steps);
  const Embedding condition = models.text_encoder->encode(prompt);
  const Embedding null_condition = models.text_encoder->encode("");
  Rng reverse_rng(params.seed, Stream::kReverseNoise);
  Latent z = sample_initial_latent(latent_shape, params.seed);
  for (int t = schedule.steps(); t >= 1; --t) {
    const Latent eps = guided_noise(models, z, schedule.model_step(t), null_condition, condition,
                                    params.guidance.cfg_scale);
    PosteriorStats post = posterior_stats(z, eps, t, schedule);
    z = gaussian_step(post.mean, post.stddev, reverse_rng);
    if (!z.all_finite()) throw GuidanceDivergence(t, "latent became non-finite");
  }
  return models.codec->decode(z);
}

}  // namespace regionedit
