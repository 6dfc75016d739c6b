#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "regionedit/error.hpp"
#include "regionedit/metrics.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/toyzoo/networks.hpp"
#include "test_support.hpp"

using namespace regionedit;
using namespace regionedit::metrics;
using regionedit::testing::random_image;

namespace {

nn::Mat gaussian_rows(int n, int d, std::uint64_t seed) {
  Rng rng(seed, Stream::kSuite);
  nn::Mat m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

struct Encoders {
  std::shared_ptr<toyzoo::ToyImageEncoder> image =
      std::make_shared<toyzoo::ToyImageEncoder>(toyzoo::ToyImageEncoder::Config{}, 3);
  std::shared_ptr<toyzoo::ToyTextEncoder> text =
      std::make_shared<toyzoo::ToyTextEncoder>(toyzoo::ToyTextEncoder::Config{}, 4);
  toyzoo::FeaturePerceptual perceptual{image};
  EncoderFeatures features{image};
};

// Shifts every out-of-mask value by one 8-bit level.
class NudgeHarmonizer final : public Harmonizer {
 public:
  Image harmonize(const Image& image, const RegionMask& mask) const override {
    Image out = image;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (mask[p] != 0) continue;
      for (int c = 0; c < 3; ++c) out[p * 3 + static_cast<std::size_t>(c)] += 2.0 / 255.0;
    }
    return out;
  }
};

}  // namespace

TEST_CASE("frechet distance of a set with itself is zero") {
  const nn::Mat a = gaussian_rows(200, 8, 1);
  CHECK(std::abs(frechet_distance(a, a, SfidMode::kFull).value) < 1e-6);
  CHECK(std::abs(frechet_distance(a, a, SfidMode::kDiagonal).value) < 1e-6);
  CHECK(std::abs(frechet_distance(a, a).value) < 1e-6);
}

TEST_CASE("frechet distance closed forms") {
  const nn::Mat a = gaussian_rows(400, 6, 2);
  Eigen::RowVectorXd shift = Eigen::RowVectorXd::Zero(6);
  shift(0) = 1.0;

  SUBCASE("unit gaussians, mean shift e1, diagonal mode") {
    // Symmetric sample: mean exactly 0 and equal variances on both sides.
    nn::Mat sym(800, 6);
    sym << a, -a;
    const nn::Mat b = sym.rowwise() + shift;
    CHECK(frechet_distance(sym, b, SfidMode::kDiagonal).value == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("pure translation, full covariance") {
    const nn::Mat b = (a.rowwise() + 2.0 * shift).eval();
    CHECK(std::abs(frechet_distance(a, b, SfidMode::kFull).value - 4.0) < 1e-3);
  }
  SUBCASE("scaling by two, full covariance gives the trace") {
    // tr(C + 4C - 2 sqrt(4 C^2)) = tr(C)
    const nn::Mat b = 2.0 * a;
    const Eigen::RowVectorXd mean = a.colwise().mean();
    const nn::Mat centered = a.rowwise() - mean;
    const double trace = centered.squaredNorm() / (a.rows() - 1);
    const double mean_term = mean.squaredNorm();  // |2m - m|^2
    CHECK(std::abs(frechet_distance(a, b, SfidMode::kFull).value - (trace + mean_term)) < 1e-3);
  }
  SUBCASE("scaling by two, diagonal mode") {
    const nn::Mat b = 2.0 * a;
    const Eigen::RowVectorXd mean = a.colwise().mean();
    const nn::Mat centered = a.rowwise() - mean;
    double expected = mean.squaredNorm();
    for (int j = 0; j < 6; ++j) expected += centered.col(j).squaredNorm() / (a.rows() - 1);
    CHECK(std::abs(frechet_distance(a, b, SfidMode::kDiagonal).value - expected) < 1e-3);
  }
}

TEST_CASE("frechet distance stabilizes with too few samples") {
  const nn::Mat a = gaussian_rows(5, 16, 3);
  const nn::Mat b = gaussian_rows(5, 16, 4);
  const SfidResult r = frechet_distance(a, b);
  CHECK(r.stabilized);
  CHECK(r.diagonal);
  CHECK(r.value == doctest::Approx(frechet_distance(a, b, SfidMode::kDiagonal).value));
  const SfidResult full = frechet_distance(gaussian_rows(200, 4, 5), gaussian_rows(200, 4, 6));
  CHECK_FALSE(full.stabilized);
  CHECK_FALSE(full.diagonal);
  CHECK_THROWS_AS(frechet_distance(nn::Mat(0, 4), a), InvalidArgument);
  CHECK_THROWS_AS(frechet_distance(gaussian_rows(3, 4, 7), a), ShapeMismatch);
}

TEST_CASE("mse and psnr by hand") {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{1, 2, 3, 6};
  CHECK(mse(a, b) == 1.0);
  CHECK(psnr(a, b, 255.0) == 10.0 * std::log10(255.0 * 255.0));
  CHECK(psnr(a, a, 255.0) == kPsnrSentinel);

  // 2x2 images on the 8-bit scale: 0 vs 255 in one of twelve values.
  Image x({2, 2, 3}, -1.0);
  Image y = x;
  y.at(1, 1, 2) = 1.0;
  CHECK(psnr(x, y) == doctest::Approx(10.0 * std::log10(12.0)).epsilon(1e-12));
  // One 8-bit level in every value.
  Image z({2, 2, 3}, -1.0 + 2.0 / 255.0);
  CHECK(psnr(x, z) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-12));
  CHECK_THROWS_AS(mse(a, std::vector<double>{1, 2}), ShapeMismatch);
}

TEST_CASE("outside-mask mse by hand") {
  const Image x0({2, 2, 3}, 0.0);
  Image x_hat({2, 2, 3}, 0.5);
  RegionMask mask({2, 2});
  mask.at(0, 0) = 1;
  x_hat.at(0, 0, 0) = 9.0;  // inside the mask, ignored
  CHECK(outside_mse(x0, x_hat, mask) == 0.25);
  CHECK(outside_mse(x0, x_hat, RegionMask({2, 2}, 1)) == 0.0);
}

TEST_CASE("clip score") {
  Encoders e;
  const Image img = random_image({32, 32, 3}, 8);
  const Embedding self = e.image->embed_image(img);
  CHECK(clip_score(img, self, *e.image) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<Image> images{img, random_image({32, 32, 3}, 9)};
  const double mean = clip_score(images, "a red square", *e.text, *e.image);
  const Embedding t = e.text->encode("a red square");
  CHECK(mean == doctest::Approx((clip_score(images[0], t, *e.image) +
                                 clip_score(images[1], t, *e.image)) / 2));
  const std::vector<Image> swapped{images[1], images[0]};
  CHECK(clip_score(swapped, "a red square", *e.text, *e.image) == doctest::Approx(mean));
}

TEST_CASE("preservation distance") {
  Encoders e;
  const Image x0 = random_image({32, 32, 3}, 10);
  RegionMask mask({32, 32});
  for (int y = 8; y < 20; ++y)
    for (int x = 8; x < 20; ++x) mask.at(y, x) = 1;
  CHECK(preservation_lpips(x0, x0, mask, e.perceptual) == 0.0);
  Image edited = x0;
  for (int y = 8; y < 20; ++y)
    for (int x = 8; x < 20; ++x) edited.at(y, x, 0) = 1.0;
  CHECK(preservation_lpips(x0, edited, mask, e.perceptual) == 0.0);
  CHECK(preservation_lpips(x0, random_image({32, 32, 3}, 11), mask, e.perceptual) > 0.0);
}

TEST_CASE("harmonization score") {
  const Image x = random_image({8, 8, 3}, 12);
  RegionMask mask({8, 8});
  for (int i = 0; i < 16; ++i) mask[static_cast<std::size_t>(i)] = 1;
  const IdentityHarmonizer identity;
  CHECK(ih_score(x, mask, &identity).value == kPsnrSentinel);
  CHECK_FALSE(ih_score(x, mask, &identity).identity_fallback);
  const IhScore fallback = ih_score(x, mask, nullptr);
  CHECK(fallback.identity_fallback);
  CHECK(fallback.value == kPsnrSentinel);
  // 48 of 64 pixels moved by one level: mse = 0.75 on the 8-bit scale.
  const NudgeHarmonizer nudge;
  CHECK(ih_score(x, mask, &nudge).value ==
        doctest::Approx(10.0 * std::log10(255.0 * 255.0 / 0.75)).epsilon(1e-9));
}

TEST_CASE("evaluate aggregates per-image values") {
  Encoders e;
  const std::vector<Image> originals{random_image({32, 32, 3}, 13), random_image({32, 32, 3}, 14),
                                     random_image({32, 32, 3}, 15)};
  const std::vector<RegionMask> empty(3, RegionMask({32, 32}));
  EvaluationInputs in{originals, originals, empty, {"a", "b", "c"}, "a red square"};
  Evaluators ev{e.text.get(), e.image.get(), &e.perceptual, &e.features, nullptr};
  const MetricReport r = evaluate(in, ev);
  CHECK(r.preservation_lpips == 0.0);
  CHECK(std::abs(r.sfid) < 1e-6);
  CHECK(r.ih_identity_fallback);
  CHECK(r.sfid_stabilized);
  REQUIRE(r.per_image.size() == 3);
  CHECK(r.per_image[1].name == "b");
  double mean_clip = 0;
  for (const auto& p : r.per_image) {
    mean_clip += p.clip_score / 3;
    CHECK(p.outside_mse == 0.0);
  }
  CHECK(r.clip_score == doctest::Approx(mean_clip));

  const auto j = nlohmann::json::parse(metric_report_to_json(r));
  for (const char* key : {"clip_score", "sfid", "ih_score", "preservation_lpips", "per_image", "notes"}) {
    CHECK(j.contains(key));
  }

  const std::vector<RegionMask> two(2, RegionMask({32, 32}));
  EvaluationInputs bad{originals, originals, two, {}, "a red square"};
  CHECK_THROWS_AS(evaluate(bad, ev), InvalidArgument);
}
