#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "regionedit/models.hpp"
#include "regionedit/toyzoo/train.hpp"

namespace regionedit::toyzoo {

// On-disk layout: <bundle>/<component>/{weights.bin, manifest.json} for the
// components codec, embedder, evaluator, segmenter and denoiser. The
// evaluator is a second embedder trained from a different seed; it scores
// edits so that guidance does not optimize the metric it is judged by.
enum class Component { kCodec, kEmbedder, kEvaluator, kSegmenter, kDenoiser };

std::string component_dir_name(Component component);
Component parse_component(std::string_view name);

struct ComponentManifest {
  std::string component;  // directory name
  std::string name;       // model kind, e.g. "toy-codec" or "identity"
  std::string version;
  Shape3 image{};
  Shape3 latent{};
  std::string metric_name;
  double metric = 0;
  std::map<std::string, double> extra;
  std::string content_hash;  // sha256 of weights.bin
  std::uint64_t seed = 0;
};

struct BundleTrainOptions {
  bool identity_codec = false;
  CodecTrainOptions codec{};
  EmbedderTrainOptions embedder{};
  EmbedderTrainOptions evaluator{};
  SegmenterTrainOptions segmenter{};
  DenoiserTrainOptions denoiser{};
};

// Much smaller settings for smoke tests; models train in seconds and are
// not expected to meet any quality bar.
BundleTrainOptions quick_train_options();

// Trains one component and writes it into `bundle_dir`. Components that
// depend on others (segmenter and denoiser need the embedder; the denoiser
// also needs the codec) load them from the same directory.
// Seed the evaluator is trained from, given the bundle seed.
std::uint64_t evaluator_seed(std::uint64_t seed);

ComponentManifest train_component(const std::filesystem::path& bundle_dir, Component component,
                                  std::uint64_t seed, const BundleTrainOptions& options,
                                  const TrainLog& log = {});
// All components in dependency order.
std::vector<ComponentManifest> train_bundle(const std::filesystem::path& bundle_dir,
                                            std::uint64_t seed, const BundleTrainOptions& options,
                                            const TrainLog& log = {});

ComponentManifest read_manifest(const std::filesystem::path& component_dir);

// Verifies hashes and geometry; throws ModelLoadError on any problem.
ModelBundle load_bundle(const std::filesystem::path& bundle_dir);

// Image encoder from an embedder component directory, or the evaluator of
// a bundle directory; used as an external metric feature extractor.
std::shared_ptr<const ImageEncoder> load_image_encoder(const std::filesystem::path& path);

// Randomly initialized models with consistent geometry, for plumbing tests.
// With `identity_codec` the denoiser runs on 32x32x3 pixel latents.
ModelBundle make_untrained_bundle(std::uint64_t seed, bool identity_codec = false);

}  // namespace regionedit::toyzoo
