#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "regionedit/calibration.hpp"
#include "regionedit/schedule.hpp"
#include "regionedit/toyzoo/dataset.hpp"
#include "regionedit/toyzoo/networks.hpp"

namespace regionedit::toyzoo {

using TrainLog = std::function<void(const std::string&)>;

struct TrainReport {
  std::string metric_name;
  double metric = 0;
  std::map<std::string, double> extra;
  std::vector<double> loss_curve;  // mean training loss per logging window
  int steps = 0;
  std::uint64_t seed = 0;
};

struct CodecTrainOptions {
  ToyCodec::Config config{};
  int steps = 1500;
  int batch = 8;
  int dataset_size = 1000;
  int holdout_size = 100;
  double learning_rate = 2e-3;
  double latent_penalty = 1e-4;
};

struct EmbedderTrainOptions {
  ToyTextEncoder::Config text{};
  ToyImageEncoder::Config image{};
  int steps = 1000;
  int batch = 24;
  int dataset_size = 1000;
  int holdout_size = 180;
  double learning_rate = 2e-3;
  double temperature = 10.0;
};

struct SegmenterTrainOptions {
  ToyBackbone::Config backbone{};
  SegmentationDecoder::Shape decoder{};
  int steps = 800;
  int batch = 8;
  int dataset_size = 1000;
  int holdout_size = 100;
  double learning_rate = 1e-3;
};

struct DenoiserTrainOptions {
  ToyDenoiser::Config config{};
  int steps = 4000;
  int batch = 32;
  int dataset_size = 2000;
  int holdout_size = 256;
  double learning_rate = 1e-3;
  double prompt_dropout = 0.1;
};

struct TrainedCodec {
  std::shared_ptr<ToyCodec> codec;
  TrainReport report;
};

struct TrainedEmbedder {
  std::shared_ptr<ToyTextEncoder> text;
  std::shared_ptr<ToyImageEncoder> image;
  TrainReport report;
};

struct TrainedSegmenter {
  std::shared_ptr<ToyBackbone> backbone;
  std::shared_ptr<SegmentationDecoder> decoder;
  std::shared_ptr<Segmenter> segmenter;
  TrainReport report;
};

struct TrainedDenoiser {
  std::shared_ptr<ToyDenoiser> denoiser;
  TrainReport report;
};

// Each trainer is deterministic given its seed and throws
// TrainingDivergence when the loss stops being finite. Returned models are
// frozen.
TrainedCodec train_codec(const CodecTrainOptions& options, std::uint64_t seed,
                         const TrainLog& log = {});
TrainedEmbedder train_embedder(const EmbedderTrainOptions& options, std::uint64_t seed,
                               const TrainLog& log = {});
TrainedSegmenter train_segmenter(const SegmenterTrainOptions& options,
                                 const ToyTextEncoder& text_encoder, std::uint64_t seed,
                                 const TrainLog& log = {});
// `codec` may be the identity codec, in which case the denoiser works in
// pixel space and its latent geometry must be 32x32x3.
TrainedDenoiser train_denoiser(const DenoiserTrainOptions& options, const Codec& codec,
                               const ToyTextEncoder& text_encoder, const NoiseSchedule& schedule,
                               std::uint64_t seed, const TrainLog& log = {});

// Masked crop seen by the guidance loss: the image inside a (possibly
// dilated) entity mask, zero elsewhere.
Image masked_crop(const Image& image, const RegionMask& mask);
RegionMask dilate(const RegionMask& mask, int radius);

// Intersection over union of two binary masks; 1 when both are empty.
double mask_iou(const RegionMask& a, const RegionMask& b);

// Caption-to-image retrieval: for every held-out image, a gallery holding it
// plus one image of each other class is ranked by the image's caption.
// Returns the top-1 hit rate.
double caption_retrieval_top1(const TextEncoder& text, const ImageEncoder& image,
                              const std::vector<Image>& images, const std::vector<int>& classes,
                              std::uint64_t seed);

}  // namespace regionedit::toyzoo
