#include <doctest.h>

#include "regionedit/calibration.hpp"
#include "regionedit/codec.hpp"
#include "regionedit/error.hpp"
#include "regionedit/sampler.hpp"
#include "regionedit/toyzoo/bundle.hpp"
#include "test_support.hpp"

using namespace regionedit;
using regionedit::testing::random_image;

namespace {

RegionMask box_mask(int y0, int y1, int x0, int x1) {
  RegionMask m({32, 32});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

EditParams short_params(int steps = 12, std::uint64_t seed = 3) {
  EditParams p;
  p.steps = steps;
  p.seed = seed;
  return p;
}

const ModelBundle& identity_bundle() {
  static const ModelBundle b = [] {
    ModelBundle m = toyzoo::make_untrained_bundle(11, true);
    return m;
  }();
  return b;
}

const ModelBundle& toy_bundle() {
  static const ModelBundle b = toyzoo::make_untrained_bundle(12, false);
  return b;
}

// Unrestricted guided sampling written out from the public primitives: no
// latent blending, loss guidance on the whole predicted clean image.
Image reference_guided(const Image& x0, const RegionMask& mask, const std::string& target_text,
                       const EditParams& params, const ModelBundle& models) {
  const Codec& codec = *models.codec;
  const Shape3 shape = codec.latent_shape_for(x0.shape());
  const NoiseSchedule schedule = respace(models.training_schedule, params.steps);
  const Embedding target = models.text_encoder->encode(target_text);
  const Embedding conditions[] = {models.text_encoder->encode(""), target};
  Rng noise(params.seed, Stream::kReverseNoise);
  Latent z = sample_initial_latent(shape, params.seed);
  for (int t = params.steps; t >= 1; --t) {
    const auto eps = models.denoiser->predict_noise(z, schedule.model_step(t), conditions);
    PosteriorStats post =
        posterior_stats(z, combine_cfg(eps[0], eps[1], params.guidance.cfg_scale), t, schedule);
    const ObjectiveEvaluation objective = evaluate_objective(
        post.predicted_clean, codec, x0, target, mask, params.guidance, *models.image_encoder,
        *models.perceptual, {}, true);
    Latent variance = post.stddev;
    for (double& v : variance.storage()) v *= v;
    const Latent mean =
        shift_mean(post.mean, variance, objective.gradient, params.guidance.grad_scale, t);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + post.stddev[i] * noise.normal();
  }
  return codec.decode(z);
}

}  // namespace

TEST_CASE("out-of-mask latents follow the noised input chain exactly") {
  for (const ModelBundle* models : {&identity_bundle(), &toy_bundle()}) {
    const Image x0 = random_image({32, 32, 3}, 1);
    const RegionMask mask = box_mask(8, 24, 4, 20);
    const LatentMask lmask =
        mask_to_latent(mask, {models->denoiser->latent_shape().height,
                              models->denoiser->latent_shape().width});
    EditParams params = short_params(20);
    params.codec = models == &identity_bundle() ? "identity" : "toy";
    int steps_seen = 0;
    std::size_t mismatches = 0;
    const auto observer = [&](const StepState& s) {
      ++steps_seen;
      REQUIRE(s.input_chain != nullptr);
      const int c = s.blended->channels();
      for (std::size_t p = 0; p < lmask.size(); ++p) {
        for (int k = 0; k < c; ++k) {
          const std::size_t i = p * static_cast<std::size_t>(c) + static_cast<std::size_t>(k);
          if (lmask[p] == 0 && (*s.blended)[i] != (*s.input_chain)[i]) ++mismatches;
          if (lmask[p] != 0 && (*s.blended)[i] != (*s.guided)[i]) ++mismatches;
        }
      }
    };
    const EditResult r = run_edit_with_mask(x0, mask, "a blue circle", params, *models, observer);
    CHECK(steps_seen == 20);
    CHECK(mismatches == 0);
    if (models == &identity_bundle()) {
      double worst = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (mask.at(y, x) == 0)
            for (int c = 0; c < 3; ++c)
              worst = std::max(worst, std::abs(r.output.at(y, x, c) - x0.at(y, x, c)));
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("an empty mask reproduces the input") {
  const Image x0 = random_image({32, 32, 3}, 2);
  EditParams params = short_params();
  params.codec = "identity";
  params.threshold = 256;
  const Latent z0 = identity_bundle().codec->encode(x0);
  Latent last;
  const auto observer = [&](const StepState& s) {
    if (s.t == 1) last = *s.blended;
  };
  const EditResult r =
      run_edit(x0, "a red square", "a blue circle", params, identity_bundle(), observer);
  CHECK(r.no_op);
  CHECK(area_fraction(r.mask) == 0.0);
  CHECK(last == z0);
  CHECK(r.output == x0);
  for (const TraceEntry& e : r.trace) CHECK(e.clip_loss == 0.0);
}

TEST_CASE("a full mask matches unrestricted guided sampling") {
  const Image x0 = random_image({32, 32, 3}, 3);
  const RegionMask ones({32, 32}, 1);
  EditParams blended = short_params(10, 5);
  blended.codec = "identity";
  EditParams unblended = blended;
  unblended.blend = false;

  std::vector<Latent> a;
  std::vector<Latent> b;
  const EditResult ra = run_edit_with_mask(x0, ones, "a green triangle", blended,
                                           identity_bundle(),
                                           [&](const StepState& s) { a.push_back(*s.blended); });
  const EditResult rb = run_edit_with_mask(x0, ones, "a green triangle", unblended,
                                           identity_bundle(),
                                           [&](const StepState& s) { b.push_back(*s.blended); });
  CHECK(a == b);
  CHECK(ra.output == rb.output);
  CHECK(ra.output == reference_guided(x0, ones, "a green triangle", blended, identity_bundle()));
}

TEST_CASE("toy-codec full mask matches the reference loop") {
  const Image x0 = random_image({32, 32, 3}, 4);
  const RegionMask ones({32, 32}, 1);
  const EditParams params = short_params(8, 6);
  const EditResult r = run_edit_with_mask(x0, ones, "a red circle", params, toy_bundle());
  CHECK(r.output == reference_guided(x0, ones, "a red circle", params, toy_bundle()));
}

TEST_CASE("edits are deterministic in the seed") {
  const Image x0 = random_image({32, 32, 3}, 5);
  const EditParams p = short_params(8, 9);
  const EditResult a = run_edit(x0, "a red square", "a blue circle", p, toy_bundle());
  const EditResult b = run_edit(x0, "a red square", "a blue circle", p, toy_bundle());
  CHECK(a.output == b.output);
  CHECK(a.trace == b.trace);
  CHECK(a.soft_mask == b.soft_mask);
  if (!a.no_op) {
    const EditResult c = run_edit(x0, "a red square", "a blue circle", short_params(8, 10),
                                  toy_bundle());
    CHECK(a.output != c.output);
  }
}

TEST_CASE("trace records every step in reverse order") {
  const Image x0 = random_image({32, 32, 3}, 6);
  EditParams p = short_params(7);
  const EditResult r = run_edit_with_mask(x0, box_mask(0, 16, 0, 32), "a red square", p,
                                          toy_bundle());
  REQUIRE(r.trace.size() == 7);
  for (int i = 0; i < 7; ++i) {
    CHECK(r.trace[static_cast<std::size_t>(i)].t == 7 - i);
    CHECK(r.trace[static_cast<std::size_t>(i)].clip_loss >= 0.0);
    CHECK(r.trace[static_cast<std::size_t>(i)].clip_loss <= 2.0);
  }
  p.record_trajectory = false;
  CHECK(run_edit_with_mask(x0, box_mask(0, 16, 0, 32), "a red square", p, toy_bundle())
            .trace.empty());
}

TEST_CASE("unguided sampling") {
  EditParams p = short_params(6, 4);
  p.guidance.cfg_scale = 0.0;
  const Image a = run_unguided("a red square", p, toy_bundle());
  CHECK(a == run_unguided("a red square", p, toy_bundle()));
  CHECK(a.shape() == Shape3{32, 32, 3});

  // Written out from the primitives.
  const ModelBundle& m = toy_bundle();
  const NoiseSchedule s = respace(m.training_schedule, p.steps);
  const Embedding conditions[] = {m.text_encoder->encode(""), m.text_encoder->encode("a red square")};
  Rng noise(p.seed, Stream::kReverseNoise);
  Latent z = sample_initial_latent(m.denoiser->latent_shape(), p.seed);
  for (int t = p.steps; t >= 1; --t) {
    const auto eps = m.denoiser->predict_noise(z, s.model_step(t), conditions);
    const PosteriorStats post = posterior_stats(z, combine_cfg(eps[0], eps[1], 0.0), t, s);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = post.mean[i] + post.stddev[i] * noise.normal();
  }
  CHECK(a == m.codec->decode(z));

  p.steps = 1;
  const Image one = run_unguided("a red square", p, toy_bundle());
  CHECK(one.all_finite());
  CHECK(one.shape() == Shape3{32, 32, 3});
}

TEST_CASE("parameter and input validation") {
  const Image x0 = random_image({32, 32, 3}, 7);
  EditParams p = short_params();
  p.steps = 0;
  CHECK_THROWS_AS(run_edit(x0, "a red square", "a blue circle", p, toy_bundle()), InvalidArgument);
  p = short_params();
  p.threshold = 257;
  CHECK_THROWS_AS(run_edit(x0, "a red square", "a blue circle", p, toy_bundle()), InvalidArgument);
  p = short_params();
  CHECK_THROWS_AS(run_edit(x0, "a red square", "", p, toy_bundle()), InvalidArgument);
  CHECK_THROWS_AS(run_edit_with_mask(x0, RegionMask({16, 16}), "a red square", p, toy_bundle()),
                  ShapeMismatch);

  const Image small = random_image({24, 24, 3}, 8);
  CHECK_THROWS_AS(run_edit(small, "a red square", "a blue circle", p, toy_bundle()),
                  InvalidArgument);
  p.resize = ResizePolicy::kResize;
  p.steps = 2;
  const EditResult r = run_edit(small, "a red square", "a blue circle", p, toy_bundle());
  CHECK(r.output.shape() == Shape3{32, 32, 3});
}

TEST_CASE("runaway guidance raises a divergence error") {
  const Image x0 = random_image({32, 32, 3}, 9);
  EditParams p = short_params(10);
  p.guidance.grad_scale = 1e300;
  CHECK_THROWS_AS(run_edit_with_mask(x0, box_mask(0, 32, 0, 16), "a red square", p, toy_bundle()),
                  GuidanceDivergence);
}

TEST_CASE("initial latent is seeded") {
  CHECK(sample_initial_latent({8, 8, 4}, 1) == sample_initial_latent({8, 8, 4}, 1));
  CHECK(sample_initial_latent({8, 8, 4}, 1) != sample_initial_latent({8, 8, 4}, 2));
}
