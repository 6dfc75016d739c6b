#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "regionedit/calibration.hpp"
#include "regionedit/codec.hpp"
#include "regionedit/models.hpp"
#include "regionedit/nn/layers.hpp"
#include "regionedit/toyzoo/dataset.hpp"

namespace regionedit::toyzoo {

// Patch autoencoder: 3x3 conv, 4x4 patch projection to the latent grid;
// decoder mirrors it with latent-grid convs and a pixel-level refinement
// conv. Latents are standardized per channel with statistics measured on
// training data.
class ToyCodec final : public Codec {
 public:
  struct Config {
    int factor = 4;
    int latent_channels = 4;
    int hidden = 64;
    int pixel_channels = 16;
  };

  ToyCodec(Config config, std::uint64_t seed);

  std::string name() const override { return "toy"; }
  int downsample_factor() const override { return config_.factor; }
  int latent_channels() const override { return config_.latent_channels; }
  Latent encode(const Image& image) const override;
  nn::Var decode_rows(const nn::Var& latent_rows, Shape3 latent_shape) const override;

  // Batched, unstandardized paths used for training.
  nn::Var encode_raw(const nn::Var& images, int batch, int height, int width) const;
  nn::Var decode_raw(const nn::Var& latents, int batch, int latent_height, int latent_width) const;
  // Batched standardized encode of stacked images (NHWC rows).
  nn::Mat encode_batch(const nn::Mat& images, int batch, int height, int width) const;

  void set_latent_statistics(const nn::Mat& mean, const nn::Mat& stddev);

  const Config& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  Config config_;
  nn::ParameterSet params_;
  nn::Conv2d enc_conv_;
  nn::Linear enc_patch_;
  nn::Linear enc_out_;
  nn::Conv2d dec_conv1_;
  nn::Conv2d dec_conv2_;
  nn::Linear dec_patch_;
  nn::Conv2d dec_refine_;
  nn::Var latent_mean_;
  nn::Var latent_std_;
};

// Learned color and shape tables, each with an extra "any" slot for
// prompts that name only one attribute. The empty prompt maps to the zero
// vector, the null condition.
class ToyTextEncoder final : public TextEncoder {
 public:
  struct Config {
    int dim = 32;
  };

  ToyTextEncoder(Config config, std::uint64_t seed);

  int dim() const override { return config_.dim; }
  Embedding encode(std::string_view prompt) const override;

  // Differentiable unit embeddings for a list of prompts (rows).
  nn::Var embed_prompts(const std::vector<ParsedPrompt>& prompts) const;

  const Config& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  Config config_;
  nn::ParameterSet params_;
  nn::Var colors_;
  nn::Var shapes_;
};

// Small strided CNN with global average pooling.
class ToyImageEncoder final : public ImageEncoder {
 public:
  struct Config {
    int dim = 32;
    std::vector<int> channels{16, 32, 32, 64};
  };

  ToyImageEncoder(Config config, std::uint64_t seed);

  int dim() const override { return config_.dim; }
  nn::Var embed(const nn::Var& images, int batch, int height, int width) const override;
  std::vector<nn::Var> features(const nn::Var& images, int batch, int height,
                                int width) const override;

  const Config& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  std::vector<nn::Var> run(const nn::Var& images, int batch, int height, int width,
                           int* out_height, int* out_width) const;

  Config config_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear head_;
};

// Channel-normalized feature differences averaged over positions and
// layers of an image encoder.
class FeaturePerceptual final : public PerceptualMetric {
 public:
  explicit FeaturePerceptual(std::shared_ptr<const ImageEncoder> encoder);
  using PerceptualMetric::distance;
  nn::Var distance(const nn::Var& a, const nn::Var& b, int height, int width) const override;

 private:
  std::shared_ptr<const ImageEncoder> encoder_;
};

// Residual MLP over the flattened latent, modulated per block by an
// embedding of (timestep, text condition).
class ToyDenoiser final : public Denoiser {
 public:
  struct Config {
    Shape3 latent{8, 8, 4};
    int hidden = 384;
    int blocks = 3;
    int time_dim = 64;
    int cond_dim = 32;
    int cond_hidden = 128;
  };

  ToyDenoiser(Config config, std::uint64_t seed);

  Shape3 latent_shape() const override { return config_.latent; }
  std::vector<Latent> predict_noise(const Latent& z_t, int model_step,
                                    std::span<const Embedding> conditions) const override;

  // Batched: z is batch x latent.size(), conditions batch x cond_dim.
  nn::Var forward(const nn::Var& z, const std::vector<int>& steps,
                  const nn::Var& conditions) const;

  const Config& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  Config config_;
  nn::ParameterSet params_;
  nn::Linear cond_in_;
  nn::Linear cond_out_;
  nn::Linear input_;
  struct Block {
    nn::LayerNorm norm;
    nn::Linear scale;
    nn::Linear shift;
    nn::Linear fc1;
    nn::Linear fc2;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm out_norm_;
  nn::Linear output_;
};

// Small vision transformer: P x P patch tokens plus a class token, learned
// position embeddings (bilinearly resampled for other grid sizes).
class ToyBackbone final : public VisualBackbone {
 public:
  struct Config {
    int patch = 4;
    int width = 32;
    int depth = 9;
    int heads = 2;
    int mlp_width = 64;
    int base_grid = 8;
  };

  ToyBackbone(Config config, std::uint64_t seed);

  int patch_size() const override { return config_.patch; }
  int width() const override { return config_.width; }
  int depth() const override { return config_.depth; }
  std::vector<nn::Var> activations(const nn::Var& images, int batch, int height, int width,
                                   std::span<const int> layers) const override;

  const Config& config() const noexcept { return config_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

 private:
  Config config_;
  nn::ParameterSet params_;
  nn::Linear embed_;
  nn::Var class_token_;
  nn::Var position_;
  std::vector<nn::TransformerBlock> blocks_;
};

// Calibration settings used by the toy segmenter.
CalibrationConfig toy_calibration_config();

}  // namespace regionedit::toyzoo
