#include <doctest.h>

#include <cmath>
#include <limits>

#include "regionedit/codec.hpp"
#include "regionedit/error.hpp"
#include "regionedit/guidance.hpp"
#include "regionedit/nn/autodiff.hpp"
#include "regionedit/toyzoo/networks.hpp"
#include "test_support.hpp"

using namespace regionedit;
using regionedit::testing::random_image;
using regionedit::testing::random_latent;

namespace {

struct Models {
  std::shared_ptr<toyzoo::ToyImageEncoder> encoder =
      std::make_shared<toyzoo::ToyImageEncoder>(toyzoo::ToyImageEncoder::Config{}, 5);
  toyzoo::FeaturePerceptual perceptual{encoder};
};

RegionMask box_mask(int size, int y0, int y1, int x0, int x1) {
  RegionMask m({size, size});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

Latent lat(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Latent({1, n, 1}, std::move(v));
}

// Relative error of the objective gradient against central differences.
double objective_gradient_error(const Latent& latent, const Codec& codec, const Image& x0,
                                const Embedding& target, const RegionMask& mask,
                                const GuidanceParams& params, const Models& m) {
  const ObjectiveEvaluation eval = evaluate_objective(latent, codec, x0, target, mask, params,
                                                      *m.encoder, m.perceptual, {}, true);
  const double h = 1e-5;
  double diff = 0;
  double norm_a = 0;
  double norm_n = 0;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    Latent plus = latent;
    Latent minus = latent;
    plus[i] += h;
    minus[i] -= h;
    const double fp = evaluate_objective(plus, codec, x0, target, mask, params, *m.encoder,
                                         m.perceptual, {}, false)
                          .total;
    const double fm = evaluate_objective(minus, codec, x0, target, mask, params, *m.encoder,
                                         m.perceptual, {}, false)
                          .total;
    const double numeric = (fp - fm) / (2 * h);
    diff += std::pow(eval.gradient[i] - numeric, 2);
    norm_a += std::pow(eval.gradient[i], 2);
    norm_n += std::pow(numeric, 2);
  }
  return std::sqrt(diff) / std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-12});
}

}  // namespace

TEST_CASE("classifier-free guidance identities") {
  const Latent u = random_latent({3, 3, 2}, 1);
  const Latent c = random_latent({3, 3, 2}, 2);
  CHECK(combine_cfg(u, c, 0.0) == u);
  CHECK(combine_cfg(u, c, 1.0) == c);
  CHECK(combine_cfg(lat({1, 1}), lat({2, 0}), 5.0) == lat({6, -4}));

  SUBCASE("scales between 0 and 1 interpolate") {
    for (double s : {0.25, 0.5, 0.9}) {
      const Latent out = combine_cfg(u, c, s);
      for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] == doctest::Approx((1 - s) * u[i] + s * c[i]));
        CHECK(out[i] >= std::min(u[i], c[i]) - 1e-12);
        CHECK(out[i] <= std::max(u[i], c[i]) + 1e-12);
      }
    }
  }
  SUBCASE("result is affine in the scale") {
    const Latent a = combine_cfg(u, c, 2.0);
    const Latent b = combine_cfg(u, c, 4.0);
    const Latent mid = combine_cfg(u, c, 3.0);
    for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx((a[i] + b[i]) / 2));
  }
  CHECK_THROWS_AS(combine_cfg(u, Latent({3, 3, 1}), 1.0), ShapeMismatch);
}

TEST_CASE("guidance parameters are range checked") {
  GuidanceParams p;
  CHECK_NOTHROW(p.validate());
  p.cfg_scale = -1;
  try {
    p.validate();
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(e.field() == "cfg_scale");
  }
  p = {};
  p.lambda2 = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("clip guidance loss bounds and scale invariance") {
  Models m;
  const Image x = random_image({16, 16, 3}, 3);
  const RegionMask mask = box_mask(16, 4, 12, 4, 12);
  const Embedding self = m.encoder->embed_image(apply_mask(x, mask));

  CHECK(std::abs(clip_guidance(x, self, mask, *m.encoder)) < 1e-8);

  Embedding scaled = self;
  for (double& v : scaled.values) v *= 7.5;
  CHECK(clip_guidance(x, scaled, mask, *m.encoder) ==
        doctest::Approx(clip_guidance(x, self, mask, *m.encoder)).epsilon(1e-12));

  // Gram-Schmidt against the image embedding.
  Embedding ortho;
  ortho.values.resize(self.values.size());
  Rng rng(4, Stream::kSuite);
  for (double& v : ortho.values) v = rng.normal();
  double dot = 0;
  double nn = 0;
  for (std::size_t i = 0; i < self.values.size(); ++i) {
    dot += ortho.values[i] * self.values[i];
    nn += self.values[i] * self.values[i];
  }
  for (std::size_t i = 0; i < self.values.size(); ++i) ortho.values[i] -= dot / nn * self.values[i];
  CHECK(clip_guidance(x, ortho, mask, *m.encoder) == doctest::Approx(1.0).epsilon(1e-9));

  Embedding opposite = self;
  for (double& v : opposite.values) v = -v;
  CHECK(clip_guidance(x, opposite, mask, *m.encoder) == doctest::Approx(2.0).epsilon(1e-9));

  Embedding zero;
  zero.values.assign(self.values.size(), 0.0);
  CHECK_THROWS_AS(clip_guidance(x, zero, mask, *m.encoder), DegenerateEmbedding);
}

TEST_CASE("clip guidance only sees the masked region") {
  Models m;
  const Image x = random_image({16, 16, 3}, 5);
  const RegionMask mask = box_mask(16, 2, 10, 2, 10);
  const Embedding target = m.encoder->embed_image(random_image({16, 16, 3}, 6));
  Image changed = x;
  for (int y = 12; y < 16; ++y)
    for (int xx = 0; xx < 16; ++xx) changed.at(y, xx, 1) = 0.7;
  CHECK(clip_guidance(changed, target, mask, *m.encoder) ==
        clip_guidance(x, target, mask, *m.encoder));
}

TEST_CASE("NERP loss examples") {
  Models m;
  const Image x0 = random_image({16, 16, 3}, 7);
  const RegionMask mask = box_mask(16, 4, 8, 4, 12);
  CHECK(nerp_loss(x0, x0, mask, 0.5, 0.5, m.perceptual) == 0.0);

  const RegionMask ones({16, 16}, 1);
  CHECK(nerp_loss(x0, random_image({16, 16, 3}, 8), ones, 0.5, 0.5, m.perceptual) == 0.0);

  // 2x2 gray images, mask empty, MSE term only.
  const Image zeros({2, 2, 3}, 0.0);
  const Image ones_img({2, 2, 3}, 1.0);
  CHECK(nerp_loss(zeros, ones_img, RegionMask({2, 2}), 0.0, 1.0, m.perceptual) == 1.0);
}

TEST_CASE("NERP loss ignores edits inside the mask") {
  Models m;
  const Image x0 = random_image({16, 16, 3}, 9);
  const Image x_hat = random_image({16, 16, 3}, 10);
  const RegionMask mask = box_mask(16, 3, 11, 5, 13);
  Image edited = x_hat;
  for (int y = 3; y < 11; ++y)
    for (int x = 5; x < 13; ++x)
      for (int c = 0; c < 3; ++c) edited.at(y, x, c) = -edited.at(y, x, c);
  CHECK(nerp_loss(x0, edited, mask, 0.5, 0.5, m.perceptual) ==
        nerp_loss(x0, x_hat, mask, 0.5, 0.5, m.perceptual));
  CHECK(nerp_loss(x0, x_hat, mask, 0.5, 0.5, m.perceptual) > 0.0);
}

TEST_CASE("total objective is the sum of its terms") {
  Models m;
  const Image x0 = random_image({16, 16, 3}, 11);
  const Image x_hat = random_image({16, 16, 3}, 12);
  const RegionMask mask = box_mask(16, 0, 8, 0, 16);
  const Embedding target = m.encoder->embed_image(random_image({16, 16, 3}, 13));
  const GuidanceParams params;
  const double total = total_objective(x0, x_hat, target, mask, params, *m.encoder, m.perceptual);
  const double parts = clip_guidance(x_hat, target, mask, *m.encoder) +
                       nerp_loss(x0, x_hat, mask, params.lambda1, params.lambda2, m.perceptual);
  CHECK(std::abs(total - parts) < 1e-9);

  // Perfect reconstruction with a matching target.
  const Embedding self = m.encoder->embed_image(apply_mask(x0, mask));
  CHECK(std::abs(total_objective(x0, x0, self, mask, params, *m.encoder, m.perceptual)) < 1e-9);
}

TEST_CASE("objective gradient matches finite differences through the toy codec") {
  Models m;
  const toyzoo::ToyCodec codec({}, 14);
  const Latent latent = random_latent({4, 4, 4}, 15);
  const Image x0 = random_image({16, 16, 3}, 16);
  const RegionMask mask = box_mask(16, 4, 12, 2, 10);
  const Embedding target = m.encoder->embed_image(random_image({16, 16, 3}, 17));
  CHECK(objective_gradient_error(latent, codec, x0, target, mask, {}, m) < 1e-3);
}

TEST_CASE("objective gradient matches finite differences through the identity codec") {
  Models m;
  const IdentityCodec codec;
  const Latent latent = random_latent({8, 8, 3}, 18);
  const Image x0 = random_image({8, 8, 3}, 19);
  const RegionMask mask = box_mask(8, 2, 6, 2, 6);
  const Embedding target = m.encoder->embed_image(random_image({8, 8, 3}, 20));
  CHECK(objective_gradient_error(latent, codec, x0, target, mask, {}, m) < 1e-3);
}

TEST_CASE("objective terms can be switched off") {
  Models m;
  const IdentityCodec codec;
  const Latent latent = random_latent({8, 8, 3}, 21);
  const Image x0 = random_image({8, 8, 3}, 22);
  const RegionMask mask = box_mask(8, 0, 4, 0, 8);
  const Embedding target = m.encoder->embed_image(x0);
  const auto both = evaluate_objective(latent, codec, x0, target, mask, {}, *m.encoder,
                                       m.perceptual, {}, false);
  const auto clip = evaluate_objective(latent, codec, x0, target, mask, {}, *m.encoder,
                                       m.perceptual, {.clip = true, .nerp = false}, false);
  const auto nerp = evaluate_objective(latent, codec, x0, target, mask, {}, *m.encoder,
                                       m.perceptual, {.clip = false, .nerp = true}, false);
  CHECK(clip.nerp_loss == 0.0);
  CHECK(nerp.clip_loss == 0.0);
  CHECK(both.total == doctest::Approx(clip.total + nerp.total).epsilon(1e-12));
  CHECK(both.gradient.size() == 0);
}

TEST_CASE("mean shift examples") {
  const Latent mu = random_latent({2, 2, 1}, 23);
  const Latent var({2, 2, 1}, 0.3);
  const Latent grad = random_latent({2, 2, 1}, 24);
  CHECK(shift_mean(mu, var, grad, 0.0) == mu);
  CHECK(shift_mean(mu, var, Latent({2, 2, 1}, 0.0), 150.0) == mu);
  CHECK(shift_mean(lat({1}), lat({0.25}), lat({2}), 150.0) == lat({-74}));

  Latent bad = grad;
  bad[1] = std::numeric_limits<double>::infinity();
  try {
    shift_mean(mu, var, bad, 1.0, 42);
    FAIL("expected GuidanceDivergence");
  } catch (const GuidanceDivergence& e) {
    CHECK(e.step() == 42);
  }
}
