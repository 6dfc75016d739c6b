#include "regionedit/toyzoo/bundle.hpp"

#include <json.hpp>

#include "regionedit/codec.hpp"
#include "regionedit/nn/serialize.hpp"

namespace regionedit::toyzoo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
const Shape3 kImageShape{kImageSize, kImageSize, 3};

json shape_json(Shape3 s) { return json::array({s.height, s.width, s.channels}); }

Shape3 shape_from(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

json codec_config_json(const ToyCodec::Config& c) {
  return {{"factor", c.factor}, {"latent_channels", c.latent_channels}, {"hidden", c.hidden},
          {"pixel_channels", c.pixel_channels}};
}

ToyCodec::Config codec_config_from(const json& j) {
  ToyCodec::Config c;
  c.factor = j.at("factor").get<int>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.pixel_channels = j.at("pixel_channels").get<int>();
  return c;
}

json embedder_config_json(const ToyTextEncoder::Config& t, const ToyImageEncoder::Config& i) {
  return {{"dim", t.dim}, {"image_channels", i.channels}};
}

json backbone_config_json(const ToyBackbone::Config& b) {
  return {{"patch", b.patch},     {"width", b.width},         {"depth", b.depth},
          {"heads", b.heads},     {"mlp_width", b.mlp_width}, {"base_grid", b.base_grid}};
}

ToyBackbone::Config backbone_config_from(const json& j) {
  ToyBackbone::Config b;
  b.patch = j.at("patch").get<int>();
  b.width = j.at("width").get<int>();
  b.depth = j.at("depth").get<int>();
  b.heads = j.at("heads").get<int>();
  b.mlp_width = j.at("mlp_width").get<int>();
  b.base_grid = j.at("base_grid").get<int>();
  return b;
}

json decoder_shape_json(const SegmentationDecoder::Shape& s) {
  return {{"backbone_width", s.backbone_width}, {"condition_dim", s.condition_dim},
          {"embed_dim", s.embed_dim},           {"layers", s.layers},
          {"heads", s.heads},                   {"mlp_width", s.mlp_width},
          {"patch_size", s.patch_size}};
}

SegmentationDecoder::Shape decoder_shape_from(const json& j) {
  SegmentationDecoder::Shape s;
  s.backbone_width = j.at("backbone_width").get<int>();
  s.condition_dim = j.at("condition_dim").get<int>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.layers = j.at("layers").get<int>();
  s.heads = j.at("heads").get<int>();
  s.mlp_width = j.at("mlp_width").get<int>();
  s.patch_size = j.at("patch_size").get<int>();
  return s;
}

json calibration_json(const CalibrationConfig& c) {
  return {{"extraction_layers", c.extraction_layers}, {"embed_dim", c.embed_dim},
          {"patch_size", c.patch_size},               {"threshold", c.threshold},
          {"resize", c.resize == ResizePolicy::kResize ? "resize" : "reject"}};
}

CalibrationConfig calibration_from(const json& j) {
  CalibrationConfig c;
  c.extraction_layers = j.at("extraction_layers").get<std::vector<int>>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.threshold = j.at("threshold").get<int>();
  c.resize = j.at("resize").get<std::string>() == "resize" ? ResizePolicy::kResize
                                                           : ResizePolicy::kReject;
  return c;
}

json denoiser_config_json(const ToyDenoiser::Config& c) {
  return {{"latent", shape_json(c.latent)}, {"hidden", c.hidden},
          {"blocks", c.blocks},             {"time_dim", c.time_dim},
          {"cond_dim", c.cond_dim},         {"cond_hidden", c.cond_hidden}};
}

ToyDenoiser::Config denoiser_config_from(const json& j) {
  ToyDenoiser::Config c;
  c.latent = shape_from(j.at("latent"));
  c.hidden = j.at("hidden").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.cond_hidden = j.at("cond_hidden").get<int>();
  return c;
}

json schedule_json(const NoiseSchedule& s) {
  return {{"kind", "linear"}, {"steps", s.steps()}, {"beta_start", s.betas().front()},
          {"beta_end", s.betas().back()}};
}

struct Loaded {
  ComponentManifest manifest;
  json raw;
  std::vector<char> weights;
};

Loaded load_component(const fs::path& dir) {
  Loaded out;
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path weights_path = dir / "weights.bin";
  if (!fs::exists(manifest_path) || !fs::exists(weights_path)) {
    throw ModelLoadError("missing manifest.json or weights.bin in " + dir.string());
  }
  try {
    const std::vector<char> text = nn::read_file(manifest_path);
    out.raw = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ModelLoadError("unreadable manifest " + manifest_path.string() + ": " + e.what());
  }
  out.manifest = read_manifest(dir);
  out.weights = nn::read_file(weights_path);
  const std::string hash = nn::sha256_hex(out.weights);
  if (hash != out.manifest.content_hash) {
    throw ModelLoadError("content hash mismatch for " + weights_path.string() + ": manifest " +
                         out.manifest.content_hash + ", file " + hash);
  }
  return out;
}

void write_component(const fs::path& bundle_dir, Component component, const std::string& name,
                     const nn::ParameterSet& params, Shape3 latent, const TrainReport& report,
                     const json& config, ComponentManifest* manifest_out) {
  const fs::path dir = bundle_dir / component_dir_name(component);
  fs::create_directories(dir);
  const std::vector<char> weights = nn::serialize_parameters(params);
  const std::string hash = nn::sha256_hex(weights);
  json extra = json::object();
  for (const auto& [k, v] : report.extra) extra[k] = v;
  json manifest = {
      {"name", name},
      {"version", kVersion},
      {"geometry", {{"image", shape_json(kImageShape)}, {"latent", shape_json(latent)}}},
      {"metric", {{"name", report.metric_name}, {"value", report.metric}, {"extra", extra}}},
      {"content_hash", hash},
      {"config", config},
      {"training", {{"seed", report.seed}, {"steps", report.steps}, {"loss_curve", report.loss_curve}}},
  };
  nn::write_file_atomic(dir / "weights.bin", weights);
  nn::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  if (manifest_out != nullptr) *manifest_out = read_manifest(dir);
}

void restore(const nn::ParameterSet& params, const std::vector<char>& weights,
             const fs::path& dir) {
  try {
    nn::deserialize_parameters(weights, params);
  } catch (const ModelLoadError& e) {
    throw ModelLoadError(dir.string() + ": " + e.what());
  }
  params.set_trainable(false);
}

std::shared_ptr<const Codec> load_codec(const fs::path& dir, ComponentManifest* manifest) {
  Loaded c = load_component(dir);
  *manifest = c.manifest;
  if (c.manifest.name == "identity") return std::make_shared<IdentityCodec>();
  if (c.manifest.name != "toy-codec") throw ModelLoadError("unknown codec kind " + c.manifest.name);
  auto codec = std::make_shared<ToyCodec>(codec_config_from(c.raw.at("config")), 0);
  restore(codec->parameters(), c.weights, dir);
  return codec;
}

struct LoadedEmbedder {
  std::shared_ptr<ToyTextEncoder> text;
  std::shared_ptr<ToyImageEncoder> image;
  ComponentManifest manifest;
};

LoadedEmbedder load_embedder(const fs::path& dir) {
  Loaded c = load_component(dir);
  if (c.manifest.name != "toy-embedder") throw ModelLoadError("unknown embedder kind " + c.manifest.name);
  const json& cfg = c.raw.at("config");
  ToyTextEncoder::Config tc;
  tc.dim = cfg.at("dim").get<int>();
  ToyImageEncoder::Config ic;
  ic.dim = tc.dim;
  ic.channels = cfg.at("image_channels").get<std::vector<int>>();
  auto text = std::make_shared<ToyTextEncoder>(tc, 0);
  auto image = std::make_shared<ToyImageEncoder>(ic, 0);
  // One weights file holds both halves, text tables first.
  nn::ParameterSet joint;
  for (const auto& [name, v] : text->parameters().entries()) joint.add("text." + name, v.value());
  for (const auto& [name, v] : image->parameters().entries()) joint.add("image." + name, v.value());
  restore(joint, c.weights, dir);
  std::size_t i = 0;
  auto copy_into = [&](const nn::ParameterSet& target) {
    for (const auto& [_, v] : target.entries()) {
      nn::Var handle = v;
      handle.mutable_value() = joint.entries()[i++].second.value();
    }
    target.set_trainable(false);
  };
  copy_into(text->parameters());
  copy_into(image->parameters());
  return {text, image, c.manifest};
}

nn::ParameterSet joint_embedder_parameters(const ToyTextEncoder& text, const ToyImageEncoder& image) {
  nn::ParameterSet joint;
  for (const auto& [name, v] : text.parameters().entries()) joint.add("text." + name, v.value());
  for (const auto& [name, v] : image.parameters().entries()) joint.add("image." + name, v.value());
  return joint;
}

std::shared_ptr<const Segmenter> load_segmenter(const fs::path& dir, ComponentManifest* manifest) {
  Loaded c = load_component(dir);
  *manifest = c.manifest;
  if (c.manifest.name != "toy-segmenter") throw ModelLoadError("unknown segmenter kind " + c.manifest.name);
  const json& cfg = c.raw.at("config");
  auto backbone = std::make_shared<ToyBackbone>(backbone_config_from(cfg.at("backbone")), 0);
  Rng rng(0, Stream::kInit);
  auto decoder = std::make_shared<SegmentationDecoder>(decoder_shape_from(cfg.at("decoder")), rng);
  nn::ParameterSet joint;
  for (const auto& [name, v] : backbone->parameters().entries()) joint.add("backbone." + name, v.value());
  for (const auto& [name, v] : decoder->parameters().entries()) joint.add("decoder." + name, v.value());
  restore(joint, c.weights, dir);
  std::size_t i = 0;
  for (const nn::ParameterSet* target : {&backbone->parameters(), &decoder->parameters()}) {
    for (const auto& [_, v] : target->entries()) {
      nn::Var handle = v;
      handle.mutable_value() = joint.entries()[i++].second.value();
    }
    target->set_trainable(false);
  }
  return std::make_shared<Segmenter>(backbone, decoder, calibration_from(cfg.at("calibration")));
}

std::shared_ptr<const ToyDenoiser> load_denoiser(const fs::path& dir, ComponentManifest* manifest,
                                                 NoiseSchedule* schedule) {
  Loaded c = load_component(dir);
  *manifest = c.manifest;
  if (c.manifest.name != "toy-denoiser") throw ModelLoadError("unknown denoiser kind " + c.manifest.name);
  const json& cfg = c.raw.at("config");
  auto denoiser = std::make_shared<ToyDenoiser>(denoiser_config_from(cfg.at("network")), 0);
  restore(denoiser->parameters(), c.weights, dir);
  const json& s = cfg.at("schedule");
  *schedule = make_linear_schedule(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                   s.at("beta_end").get<double>());
  return denoiser;
}

ComponentInfo info(const ComponentManifest& m) { return {m.component + ":" + m.name, m.version, m.content_hash}; }

}  // namespace

std::string component_dir_name(Component component) {
  switch (component) {
    case Component::kCodec:
      return "codec";
    case Component::kEmbedder:
      return "embedder";
    case Component::kEvaluator:
      return "evaluator";
    case Component::kSegmenter:
      return "segmenter";
    case Component::kDenoiser:
      return "denoiser";
  }
  return "";
}

Component parse_component(std::string_view name) {
  for (Component c : {Component::kCodec, Component::kEmbedder, Component::kEvaluator,
                      Component::kSegmenter, Component::kDenoiser}) {
    if (component_dir_name(c) == name) return c;
  }
  throw InvalidArgument("component", "unknown component \"" + std::string(name) + "\"");
}

BundleTrainOptions quick_train_options() {
  BundleTrainOptions o;
  o.codec.steps = 30;
  o.codec.dataset_size = 40;
  o.codec.holdout_size = 10;
  o.codec.config.hidden = 16;
  o.embedder.steps = 30;
  o.embedder.batch = 8;
  o.embedder.dataset_size = 40;
  o.embedder.holdout_size = 18;
  o.evaluator = o.embedder;
  o.segmenter.steps = 5;
  o.segmenter.batch = 2;
  o.segmenter.dataset_size = 20;
  o.segmenter.holdout_size = 5;
  o.segmenter.backbone.depth = 3;
  o.segmenter.backbone.width = 16;
  o.segmenter.backbone.mlp_width = 32;
  o.segmenter.decoder.embed_dim = 16;
  o.segmenter.decoder.mlp_width = 32;
  o.denoiser.steps = 30;
  o.denoiser.dataset_size = 40;
  o.denoiser.holdout_size = 16;
  o.denoiser.config.hidden = 64;
  o.denoiser.config.blocks = 1;
  return o;
}

ComponentManifest read_manifest(const fs::path& component_dir) {
  const fs::path path = component_dir / "manifest.json";
  if (!fs::exists(path)) throw ModelLoadError("missing " + path.string());
  try {
    const std::vector<char> text = nn::read_file(path);
    const json j = json::parse(text.begin(), text.end());
    ComponentManifest m;
    m.component = component_dir.filename().string();
    m.name = j.at("name").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.image = shape_from(j.at("geometry").at("image"));
    m.latent = shape_from(j.at("geometry").at("latent"));
    m.metric_name = j.at("metric").at("name").get<std::string>();
    m.metric = j.at("metric").at("value").get<double>();
    for (const auto& [k, v] : j.at("metric").at("extra").items()) m.extra[k] = v.get<double>();
    m.content_hash = j.at("content_hash").get<std::string>();
    m.seed = j.at("training").at("seed").get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw ModelLoadError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::uint64_t evaluator_seed(std::uint64_t seed) {
  return Rng(seed, Stream::kEvaluator).next_u64();
}

ComponentManifest train_component(const fs::path& bundle_dir, Component component,
                                  std::uint64_t seed, const BundleTrainOptions& options,
                                  const TrainLog& log) {
  ComponentManifest manifest;
  switch (component) {
    case Component::kCodec: {
      if (options.identity_codec) {
        nn::ParameterSet empty;
        TrainReport report;
        report.metric_name = "reconstruction_mse";
        report.metric = 0.0;
        report.seed = seed;
        write_component(bundle_dir, component, "identity", empty, kImageShape, report,
                        json::object(), &manifest);
        break;
      }
      TrainedCodec t = train_codec(options.codec, seed, log);
      write_component(bundle_dir, component, "toy-codec", t.codec->parameters(),
                      t.codec->latent_shape_for(kImageShape), t.report,
                      codec_config_json(t.codec->config()), &manifest);
      break;
    }
    case Component::kEmbedder: {
      TrainedEmbedder t = train_embedder(options.embedder, seed, log);
      write_component(bundle_dir, component, "toy-embedder",
                      joint_embedder_parameters(*t.text, *t.image), Shape3{}, t.report,
                      embedder_config_json(t.text->config(), t.image->config()), &manifest);
      break;
    }
    case Component::kEvaluator: {
      TrainedEmbedder t = train_embedder(options.evaluator, evaluator_seed(seed), log);
      t.report.seed = seed;
      write_component(bundle_dir, component, "toy-embedder",
                      joint_embedder_parameters(*t.text, *t.image), Shape3{}, t.report,
                      embedder_config_json(t.text->config(), t.image->config()), &manifest);
      break;
    }
    case Component::kSegmenter: {
      const LoadedEmbedder e = load_embedder(bundle_dir / component_dir_name(Component::kEmbedder));
      TrainedSegmenter t = train_segmenter(options.segmenter, *e.text, seed, log);
      nn::ParameterSet joint;
      for (const auto& [name, v] : t.backbone->parameters().entries()) joint.add("backbone." + name, v.value());
      for (const auto& [name, v] : t.decoder->parameters().entries()) joint.add("decoder." + name, v.value());
      json config = {{"backbone", backbone_config_json(t.backbone->config())},
                     {"decoder", decoder_shape_json(t.decoder->shape())},
                     {"calibration", calibration_json(t.segmenter->config())}};
      write_component(bundle_dir, component, "toy-segmenter", joint, Shape3{}, t.report, config,
                      &manifest);
      break;
    }
    case Component::kDenoiser: {
      ComponentManifest codec_manifest;
      const auto codec = load_codec(bundle_dir / component_dir_name(Component::kCodec), &codec_manifest);
      const LoadedEmbedder e = load_embedder(bundle_dir / component_dir_name(Component::kEmbedder));
      DenoiserTrainOptions o = options.denoiser;
      o.config.latent = codec->latent_shape_for(kImageShape);
      const NoiseSchedule schedule = default_training_schedule();
      TrainedDenoiser t = train_denoiser(o, *codec, *e.text, schedule, seed, log);
      json config = {{"network", denoiser_config_json(t.denoiser->config())},
                     {"schedule", schedule_json(schedule)},
                     {"prompt_dropout", o.prompt_dropout}};
      write_component(bundle_dir, component, "toy-denoiser", t.denoiser->parameters(),
                      o.config.latent, t.report, config, &manifest);
      break;
    }
  }
  return manifest;
}

std::vector<ComponentManifest> train_bundle(const fs::path& bundle_dir, std::uint64_t seed,
                                            const BundleTrainOptions& options,
                                            const TrainLog& log) {
  std::vector<ComponentManifest> out;
  for (Component c : {Component::kCodec, Component::kEmbedder, Component::kEvaluator,
                      Component::kSegmenter, Component::kDenoiser}) {
    out.push_back(train_component(bundle_dir, c, seed, options, log));
  }
  return out;
}

ModelBundle load_bundle(const fs::path& bundle_dir) {
  if (!fs::is_directory(bundle_dir)) throw ModelLoadError("no bundle at " + bundle_dir.string());
  ModelBundle bundle;
  ComponentManifest codec_m;
  ComponentManifest seg_m;
  ComponentManifest den_m;
  bundle.codec = load_codec(bundle_dir / "codec", &codec_m);
  const LoadedEmbedder e = load_embedder(bundle_dir / "embedder");
  const LoadedEmbedder ev = load_embedder(bundle_dir / "evaluator");
  bundle.segmenter = load_segmenter(bundle_dir / "segmenter", &seg_m);
  bundle.denoiser = load_denoiser(bundle_dir / "denoiser", &den_m, &bundle.training_schedule);
  bundle.text_encoder = e.text;
  bundle.image_encoder = e.image;
  bundle.eval_image_encoder = ev.image;
  bundle.eval_text_encoder = ev.text;
  bundle.perceptual = std::make_shared<FeaturePerceptual>(e.image);
  bundle.image_shape = kImageShape;
  if (codec_m.latent != den_m.latent) {
    throw ModelLoadError("codec latent " + codec_m.latent.to_string() +
                         " disagrees with denoiser latent " + den_m.latent.to_string());
  }
  bundle.components = {info(codec_m), info(e.manifest), info(ev.manifest), info(seg_m),
                       info(den_m)};
  bundle.validate();
  return bundle;
}

std::shared_ptr<const ImageEncoder> load_image_encoder(const fs::path& path) {
  const fs::path dir = fs::exists(path / "evaluator" / "manifest.json") ? path / "evaluator" : path;
  return load_embedder(dir).image;
}

ModelBundle make_untrained_bundle(std::uint64_t seed, bool identity_codec) {
  ModelBundle bundle;
  std::shared_ptr<const Codec> codec;
  if (identity_codec) {
    codec = std::make_shared<IdentityCodec>();
  } else {
    auto toy = std::make_shared<ToyCodec>(ToyCodec::Config{}, seed);
    toy->parameters().set_trainable(false);
    codec = toy;
  }
  auto text = std::make_shared<ToyTextEncoder>(ToyTextEncoder::Config{}, seed);
  auto image = std::make_shared<ToyImageEncoder>(ToyImageEncoder::Config{}, seed);
  text->parameters().set_trainable(false);
  image->parameters().set_trainable(false);

  ToyBackbone::Config bc;
  bc.depth = 3;
  bc.width = 16;
  bc.mlp_width = 32;
  auto backbone = std::make_shared<ToyBackbone>(bc, seed);
  SegmentationDecoder::Shape ds;
  ds.backbone_width = bc.width;
  ds.condition_dim = text->dim();
  ds.embed_dim = 16;
  ds.mlp_width = 32;
  ds.patch_size = bc.patch;
  Rng rng(seed, Stream::kInit);
  auto decoder = std::make_shared<SegmentationDecoder>(ds, rng);
  backbone->parameters().set_trainable(false);
  decoder->parameters().set_trainable(false);
  CalibrationConfig cc = toy_calibration_config();
  cc.extraction_layers = {1, 2, 3};
  cc.embed_dim = ds.embed_dim;

  ToyDenoiser::Config dc;
  dc.latent = codec->latent_shape_for(kImageShape);
  dc.hidden = 64;
  dc.blocks = 1;
  dc.cond_dim = text->dim();
  auto denoiser = std::make_shared<ToyDenoiser>(dc, seed);
  // The output layer starts at zero; give it weights so predictions are not trivially zero.
  Rng fill(seed, Stream::kInit);
  for (const auto& [name, v] : denoiser->parameters().entries()) {
    if (name == "output.weight") {
      nn::Var handle = v;
      handle.mutable_value() = nn::uniform_init(fill, v.rows(), v.cols(), 0.05);
    }
  }
  denoiser->parameters().set_trainable(false);

  bundle.codec = codec;
  bundle.text_encoder = text;
  bundle.image_encoder = image;
  bundle.eval_image_encoder = image;
  bundle.eval_text_encoder = text;
  bundle.perceptual = std::make_shared<FeaturePerceptual>(image);
  bundle.segmenter = std::make_shared<Segmenter>(backbone, decoder, cc);
  bundle.denoiser = denoiser;
  bundle.image_shape = kImageShape;
  bundle.components = {{"untrained", kVersion, ""}};
  bundle.validate();
  return bundle;
}

}  // namespace regionedit::toyzoo
