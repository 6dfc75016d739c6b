#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regionedit/models.hpp"
#include "regionedit/nn/autodiff.hpp"
#include "regionedit/tensor.hpp"

namespace regionedit::metrics {

// Mean cosine similarity between each image embedding and the prompt
// embedding.
double clip_score(std::span<const Image> images, std::string_view prompt,
                  const TextEncoder& text_encoder, const ImageEncoder& image_encoder);
double clip_score(const Image& image, const Embedding& text, const ImageEncoder& image_encoder);

// Turns images into fixed-dimension feature rows (n x d).
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual nn::Mat features(std::span<const Image> images) const = 0;
};

// Un-normalized embeddings of an image encoder.
class EncoderFeatures final : public FeatureExtractor {
 public:
  explicit EncoderFeatures(std::shared_ptr<const ImageEncoder> encoder);
  nn::Mat features(std::span<const Image> images) const override;

 private:
  std::shared_ptr<const ImageEncoder> encoder_;
};

enum class SfidMode { kAuto, kFull, kDiagonal };

struct SfidResult {
  double value = 0;
  bool diagonal = false;    // which covariance model produced the value
  bool stabilized = false;  // kAuto fell back to diagonal
};

// Frechet distance between Gaussians fitted to two feature sets (unbiased
// covariance). kFull uses full covariances; kDiagonal keeps only the
// variances; kAuto uses full covariances unless either one is singular or
// ill-conditioned (too few samples), in which case it switches to the
// diagonal model and flags the result.
SfidResult frechet_distance(const nn::Mat& a, const nn::Mat& b, SfidMode mode = SfidMode::kAuto);
SfidResult sfid(std::span<const Image> a, std::span<const Image> b,
                const FeatureExtractor& extractor, SfidMode mode = SfidMode::kAuto);

// Mean squared error over all elements; images must match in shape.
double mse(std::span<const double> a, std::span<const double> b);
// 10 log10(peak^2 / mse); identical inputs give kPsnrSentinel.
double psnr(std::span<const double> a, std::span<const double> b, double peak);
// Images compared on the 8-bit scale (peak 255).
double psnr(const Image& a, const Image& b);
inline constexpr double kPsnrSentinel = 100.0;

// MSE restricted to pixels outside the mask (all channels).
double outside_mse(const Image& x0, const Image& x_hat, const RegionMask& mask);

// Perceptual distance between x0 (.) (1-m) and x_hat (.) (1-m).
double preservation_lpips(const Image& x0, const Image& x_hat, const RegionMask& mask,
                          const PerceptualMetric& perceptual);

class Harmonizer {
 public:
  virtual ~Harmonizer() = default;
  virtual Image harmonize(const Image& image, const RegionMask& mask) const = 0;
};

class IdentityHarmonizer final : public Harmonizer {
 public:
  Image harmonize(const Image& image, const RegionMask&) const override { return image; }
};

struct IhScore {
  double value = 0;
  bool identity_fallback = false;
};

// PSNR(harmonize(x_hat, m), x_hat). A null harmonizer falls back to the
// identity (value kPsnrSentinel) and is flagged.
IhScore ih_score(const Image& x_hat, const RegionMask& mask, const Harmonizer* harmonizer);

struct PerImageMetrics {
  std::string name;
  double clip_score = 0;
  double preservation_lpips = 0;
  double ih_score = 0;
  double outside_mse = 0;
};

struct MetricReport {
  double clip_score = 0;
  double sfid = 0;
  bool sfid_diagonal = false;
  bool sfid_stabilized = false;
  double ih_score = 0;
  bool ih_identity_fallback = false;
  double preservation_lpips = 0;
  std::vector<PerImageMetrics> per_image;
  std::vector<std::string> notes;
};

struct EvaluationInputs {
  std::span<const Image> edited;
  std::span<const Image> originals;
  std::span<const RegionMask> masks;
  std::vector<std::string> names;  // optional, one per image
  std::string prompt;
};

struct Evaluators {
  const TextEncoder* text_encoder = nullptr;
  const ImageEncoder* image_encoder = nullptr;
  const PerceptualMetric* perceptual = nullptr;
  const FeatureExtractor* features = nullptr;
  const Harmonizer* harmonizer = nullptr;  // null: identity fallback
};

// Aggregates are means of the per-image values.
MetricReport evaluate(const EvaluationInputs& inputs, const Evaluators& evaluators);

}  // namespace regionedit::metrics
