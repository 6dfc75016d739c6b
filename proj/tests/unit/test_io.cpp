#include <doctest.h>

#include <json.hpp>

#include "regionedit/error.hpp"
#include "regionedit/image_io.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/sampler.hpp"
#include "regionedit/toyzoo/bundle.hpp"
#include "test_support.hpp"

using namespace regionedit;
using nlohmann::json;

namespace {

void expect_field(const std::function<void()>& f, const std::string& field) {
  try {
    f();
    FAIL("expected InvalidArgument for " << field);
  } catch (const InvalidArgument& e) {
    CHECK(e.field() == field);
  }
}

}  // namespace

TEST_CASE("8-bit conversions") {
  CHECK(from_8bit(0) == -1.0);
  CHECK(from_8bit(255) == 1.0);
  for (int v = 0; v <= 255; ++v) CHECK(to_8bit(from_8bit(v)) == v);
  CHECK(to_8bit(7.0) == 255);
  CHECK(to_8bit(-7.0) == 0);
}

TEST_CASE("png round trip is exact on 8-bit values") {
  Image img({5, 7, 3});
  Rng rng(1, Stream::kSuite);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = from_8bit(rng.uniform_int(0, 255));
  const std::string bytes = encode_png(img);
  CHECK(decode_png(bytes) == img);
  CHECK(encode_png(img) == bytes);
}

TEST_CASE("mask pngs") {
  RegionMask m({4, 6});
  m.at(1, 2) = 1;
  m.at(3, 5) = 1;
  CHECK(decode_mask_png(encode_png(m)) == m);

  SoftMask soft({2, 2});
  soft[0] = 0.4;
  soft[1] = 127.6;
  soft[2] = 255.0;
  soft[3] = 3.0;
  const Image gray = decode_png(encode_png(soft));
  CHECK(to_8bit(gray.at(0, 0, 0)) == 0);
  CHECK(to_8bit(gray.at(0, 1, 1)) == 128);
  CHECK(to_8bit(gray.at(1, 0, 2)) == 255);
}

TEST_CASE("png files") {
  regionedit::testing::TempDir dir;
  const Image img = decode_png(encode_png(regionedit::testing::random_image({4, 4, 3}, 2)));
  write_png(dir / "x.png", img);
  CHECK(read_png(dir / "x.png") == img);
  CHECK_THROWS(read_png(dir / "missing.png"));
}

TEST_CASE("garbage is not a png") {
  expect_field([] { decode_png("definitely not a png"); }, "image");
  expect_field([] { decode_png(""); }, "image");
}

TEST_CASE("edit params JSON round trip") {
  EditParams p;
  p.steps = 42;
  p.guidance.cfg_scale = 2.5;
  p.guidance.grad_scale = 10;
  p.threshold = 0;
  p.seed = 18446744073709551615ull;
  p.codec = "identity";
  p.blend = false;
  p.resize = ResizePolicy::kResize;
  const std::string text = edit_params_to_json(p);
  CHECK(edit_params_from_json(text, EditParams{}) == p);

  const json j = json::parse(text);
  for (const char* key : {"steps", "cfg_scale", "grad_scale", "threshold", "lambda1", "lambda2",
                          "seed", "codec", "record_trajectory", "blend", "preservation_loss",
                          "resize"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("edit params JSON overrides defaults key by key") {
  EditParams defaults;
  defaults.steps = 20;
  const EditParams p = edit_params_from_json(R"({"threshold": 90})", defaults);
  CHECK(p.steps == 20);
  CHECK(p.threshold == 90);
  CHECK(edit_params_from_json("{}", defaults) == defaults);
}

TEST_CASE("edit params JSON errors name the field") {
  expect_field([] { edit_params_from_json(R"({"stepz": 3})", {}); }, "stepz");
  expect_field([] { edit_params_from_json(R"({"steps": "many"})", {}); }, "steps");
  expect_field([] { edit_params_from_json(R"({"steps": 2.5})", {}); }, "steps");
  expect_field([] { edit_params_from_json(R"({"seed": -1})", {}); }, "seed");
  expect_field([] { edit_params_from_json(R"({"blend": 1})", {}); }, "blend");
  expect_field([] { edit_params_from_json(R"({"resize": "crop"})", {}); }, "resize");
  expect_field([] { edit_params_from_json("[1, 2]", {}); }, "params");
  expect_field([] { edit_params_from_json("{", {}); }, "params");
  CHECK_NOTHROW(edit_params_from_json(R"({"target_text": "a red square"})", {}, {"target_text"}));
}

TEST_CASE("user-facing range checks") {
  EditParams p;
  CHECK_NOTHROW(validate_user_params(p, 1000));
  p.threshold = 256;
  expect_field([&] { validate_user_params(p, 1000); }, "threshold");
  p = {};
  p.steps = 1001;
  expect_field([&] { validate_user_params(p, 1000); }, "steps");
  p = {};
  p.steps = 0;
  expect_field([&] { validate_user_params(p, 1000); }, "steps");
  p = {};
  p.guidance.grad_scale = -3;
  expect_field([&] { validate_user_params(p, 1000); }, "grad_scale");
}

TEST_CASE("codec names must match the bundle") {
  const ModelBundle toy = toyzoo::make_untrained_bundle(1);
  const ModelBundle identity = toyzoo::make_untrained_bundle(1, true);
  CHECK(codec_kind(toy) == "toy");
  CHECK(codec_kind(identity) == "identity");
  EditParams p;
  CHECK_NOTHROW(check_codec(p, toy));
  expect_field([&] { check_codec(p, identity); }, "codec");
}

TEST_CASE("trace serialization") {
  const std::vector<TraceEntry> trace{{3, 0.5, 0.25, 7.0}, {2, 0.4, 0.2, 6.0}};
  const std::string text = trace_to_jsonl(trace);
  std::istringstream in(text);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    CHECK(j.at("t").get<int>() == trace[static_cast<std::size_t>(lines)].t);
    CHECK(j.at("clip_loss").get<double>() == trace[static_cast<std::size_t>(lines)].clip_loss);
    CHECK(j.contains("nerp_loss"));
    CHECK(j.contains("latent_norm"));
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(trace_to_jsonl({}).empty());
}

TEST_CASE("apply_mask and resize helpers") {
  const Image img = regionedit::testing::random_image({4, 4, 3}, 3);
  RegionMask m({4, 4});
  m.at(0, 0) = 1;
  const Image inside = apply_mask(img, m);
  const Image outside = apply_mask(img, m, true);
  CHECK(inside.at(0, 0, 1) == img.at(0, 0, 1));
  CHECK(inside.at(1, 1, 1) == 0.0);
  CHECK(outside.at(0, 0, 1) == 0.0);
  CHECK(outside.at(1, 1, 1) == img.at(1, 1, 1));

  const Image flat({3, 5, 3}, 0.25);
  const Image big = resize_bilinear(flat, 9, 2);
  CHECK(big.shape() == Shape3{9, 2, 3});
  for (double v : big.values()) CHECK(v == doctest::Approx(0.25));
  CHECK(resize_bilinear(img, 4, 4) == img);
}
