#include <doctest.h>

#include "regionedit/codec.hpp"
#include "regionedit/error.hpp"
#include "regionedit/models.hpp"
#include "regionedit/nn/autodiff.hpp"
#include "regionedit/toyzoo/networks.hpp"
#include "test_support.hpp"

using namespace regionedit;
using regionedit::testing::random_image;
using regionedit::testing::random_latent;

TEST_CASE("identity codec round-trips bit-exactly") {
  const IdentityCodec codec;
  const Image x = random_image({32, 32, 3}, 1);
  const Latent z = codec.encode(x);
  CHECK(z.shape() == x.shape());
  CHECK(codec.decode(z) == x);
  CHECK(codec.latent_shape_for({32, 32, 3}) == Shape3{32, 32, 3});
}

TEST_CASE("decode clamps to the pixel range") {
  const IdentityCodec codec;
  Latent z({1, 2, 3}, 0.0);
  z[0] = 3.0;
  z[1] = -7.0;
  z[2] = 0.25;
  const Image x = codec.decode(z);
  CHECK(x[0] == 1.0);
  CHECK(x[1] == -1.0);
  CHECK(x[2] == 0.25);
}

TEST_CASE("toy codec geometry") {
  const toyzoo::ToyCodec codec({}, 2);
  CHECK(codec.downsample_factor() == 4);
  CHECK(codec.latent_shape_for({32, 32, 3}) == Shape3{8, 8, 4});
  CHECK(codec.image_shape_for({8, 8, 4}) == Shape3{32, 32, 3});
  const Latent z = codec.encode(random_image({32, 32, 3}, 3));
  CHECK(z.shape() == Shape3{8, 8, 4});
  CHECK(z.all_finite());
  const Image x = codec.decode(random_latent({8, 8, 4}, 4));
  CHECK(x.shape() == Shape3{32, 32, 3});
  for (double v : x.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(codec.latent_shape_for({30, 32, 3}), InvalidArgument);
}

TEST_CASE("toy codec decode agrees with its differentiable path") {
  const toyzoo::ToyCodec codec({}, 5);
  const Latent z = random_latent({8, 8, 4}, 6);
  const nn::Var rows = codec.decode_rows(nn::constant(to_rows(z)), z.shape());
  Image clamped = image_from_rows(rows.value(), {32, 32, 3});
  for (double& v : clamped.storage()) v = std::clamp(v, -1.0, 1.0);
  CHECK(codec.decode(z) == clamped);
}

TEST_CASE("conform_to_codec resizes or rejects") {
  const toyzoo::ToyCodec codec({}, 7);
  const Image ok = random_image({32, 32, 3}, 8);
  CHECK(conform_to_codec(ok, codec, ResizePolicy::kReject) == ok);
  const Image odd = random_image({30, 33, 3}, 9);
  CHECK_THROWS_AS(conform_to_codec(odd, codec, ResizePolicy::kReject), InvalidArgument);
  const Image fixed = conform_to_codec(odd, codec, ResizePolicy::kResize);
  CHECK(fixed.height() == 32);
  CHECK(fixed.width() == 36);
}

TEST_CASE("mask downsampling examples") {
  SUBCASE("constant masks stay constant") {
    const LatentMask ones = mask_to_latent(RegionMask({32, 32}, 1), {8, 8});
    const LatentMask zeros = mask_to_latent(RegionMask({32, 32}, 0), {8, 8});
    for (auto v : ones.values()) CHECK(v == 1);
    for (auto v : zeros.values()) CHECK(v == 0);
  }
  SUBCASE("one quadrant of a 4x4 mask sets one of four cells") {
    RegionMask m({4, 4});
    for (int y = 0; y < 2; ++y)
      for (int x = 2; x < 4; ++x) m.at(y, x) = 1;
    const LatentMask l = mask_to_latent(m, {2, 2});
    CHECK(l.at(0, 0) == 0);
    CHECK(l.at(0, 1) == 1);
    CHECK(l.at(1, 0) == 0);
    CHECK(l.at(1, 1) == 0);
  }
  SUBCASE("a cell is set at exactly half coverage") {
    RegionMask m({4, 4});
    m.at(0, 0) = 1;
    m.at(1, 0) = 1;  // two of the four pixels under cell (0, 0)
    m.at(2, 2) = 1;  // one of four under cell (1, 1)
    const LatentMask l = mask_to_latent(m, {2, 2});
    CHECK(l.at(0, 0) == 1);
    CHECK(l.at(1, 1) == 0);
  }
  SUBCASE("non-integer ratios use area weights") {
    RegionMask m({3, 3});
    m.at(0, 0) = 1;
    m.at(0, 1) = 1;
    m.at(1, 0) = 1;
    // Cell (0,0) covers pixels [0,1.5)^2: set area 1 + 0.5 + 0.5 = 2 of 2.25.
    const LatentMask l = mask_to_latent(m, {2, 2});
    CHECK(l.at(0, 0) == 1);
    CHECK(l.at(1, 1) == 0);
  }
  CHECK_THROWS_AS(mask_to_latent(RegionMask({4, 4}), {0, 2}), InvalidArgument);
}

TEST_CASE("latent mask area tracks the pixel mask for block masks") {
  for (int k = 0; k <= 8; ++k) {
    RegionMask m({32, 32});
    for (int y = 0; y < 4 * k; ++y)
      for (int x = 0; x < 32; ++x) m.at(y, x) = 1;
    const LatentMask l = mask_to_latent(m, {8, 8});
    CHECK(area_fraction(l) == doctest::Approx(area_fraction(m)));
  }
}
