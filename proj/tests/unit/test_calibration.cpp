#include <doctest.h>

#include "regionedit/calibration.hpp"
#include "regionedit/error.hpp"
#include "regionedit/toyzoo/bundle.hpp"
#include "regionedit/toyzoo/networks.hpp"
#include "test_support.hpp"

using namespace regionedit;
using regionedit::testing::random_image;

TEST_CASE("threshold examples") {
  CHECK(area_fraction(threshold_mask(SoftMask({4, 4}, 255.0), 150)) == 1.0);
  CHECK(area_fraction(threshold_mask(SoftMask({4, 4}, 0.0), 0)) == 1.0);
  CHECK(area_fraction(threshold_mask(SoftMask({4, 4}, 149.999), 150)) == 0.0);
  CHECK(area_fraction(threshold_mask(SoftMask({4, 4}, 150.0), 150)) == 1.0);
  CHECK(area_fraction(threshold_mask(SoftMask({4, 4}, 255.0), 256)) == 0.0);
  CHECK_THROWS_AS(threshold_mask(SoftMask({4, 4}), -1), InvalidArgument);
  CHECK_THROWS_AS(threshold_mask(SoftMask({4, 4}), 257), InvalidArgument);
}

TEST_CASE("mask area is non-increasing over every threshold") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed, Stream::kSuite);
    SoftMask soft({17, 23});
    for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = rng.uniform(0.0, 255.0);
    // Integer plateaus exercise the inclusive boundary.
    for (std::size_t i = 0; i < soft.size(); i += 3) soft[i] = std::round(soft[i]);
    double previous = 1.0;
    for (int k = 0; k <= 256; ++k) {
      const RegionMask mask = threshold_mask(soft, k);
      const double area = area_fraction(mask);
      CHECK(area <= previous);
      previous = area;
      // Nested: every pixel set at K is set at K-1.
      if (k > 0) {
        const RegionMask below = threshold_mask(soft, k - 1);
        for (std::size_t i = 0; i < mask.size(); ++i) {
          if (mask[i] != 0) CHECK(below[i] == 1);
        }
      }
    }
  }
}

TEST_CASE("calibration config validation") {
  CalibrationConfig config;
  CHECK_NOTHROW(config.validate());
  config.threshold = 256;
  CHECK_THROWS_AS(config.validate(), InvalidArgument);
  config = {};
  config.extraction_layers = {};
  CHECK_THROWS_AS(config.validate(), InvalidArgument);
  config = {};
  config.extraction_layers = {0, 3};
  CHECK_THROWS_AS(config.validate(), InvalidArgument);
  CHECK(toyzoo::toy_calibration_config().threshold == 150);
}

TEST_CASE("segmenter output covers the input plane") {
  const ModelBundle models = toyzoo::make_untrained_bundle(3);
  for (int size : {32, 64}) {
    const Image image = random_image({size, size, 3}, 4);
    const SoftMask soft = segment(image, "a red square", *models.text_encoder, *models.segmenter);
    CHECK(soft.height() == size);
    CHECK(soft.width() == size);
    for (double v : soft.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 255.0);
    }
  }
}

TEST_CASE("segmentation is deterministic and prompt dependent") {
  const ModelBundle models = toyzoo::make_untrained_bundle(5);
  const Image image = random_image({32, 32, 3}, 6);
  const SoftMask a = segment(image, "a red square", *models.text_encoder, *models.segmenter);
  const SoftMask b = segment(image, "a red square", *models.text_encoder, *models.segmenter);
  const SoftMask c = segment(image, "a blue circle", *models.text_encoder, *models.segmenter);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("unknown prompts are rejected") {
  const ModelBundle models = toyzoo::make_untrained_bundle(7);
  const Image image = random_image({32, 32, 3}, 8);
  CHECK_THROWS_AS(segment(image, "a purple hexagon", *models.text_encoder, *models.segmenter),
                  InvalidArgument);
}

TEST_CASE("segmenter rejects extraction layers beyond the backbone") {
  auto backbone = std::make_shared<toyzoo::ToyBackbone>(toyzoo::ToyBackbone::Config{}, 9);
  Rng rng(10, Stream::kInit);
  auto decoder = std::make_shared<SegmentationDecoder>(SegmentationDecoder::Shape{}, rng);
  CalibrationConfig config = toyzoo::toy_calibration_config();
  config.extraction_layers = {3, 7, 12};
  CHECK_THROWS_AS(Segmenter(backbone, decoder, config), InvalidArgument);
}
