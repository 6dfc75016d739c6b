#include "regionedit/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace regionedit::metrics {

namespace {

struct Moments {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd cov;
};

Moments moments(const nn::Mat& x) {
  Moments m;
  m.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - m.mean;
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  m.cov = centered.transpose() * centered / denom;
  return m;
}

bool well_conditioned(const Eigen::MatrixXd& cov, Eigen::Index samples) {
  if (samples <= cov.rows()) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  return hi > 0 && lo > 1e-10 * hi;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  // tr((A B)^{1/2}) = tr((A^{1/2} B A^{1/2})^{1/2}) for PSD A, B.
  const Eigen::MatrixXd ra = sqrt_psd(a);
  const Eigen::MatrixXd inner = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double clip_score(const Image& image, const Embedding& text, const ImageEncoder& image_encoder) {
  return cosine_similarity(image_encoder.embed_image(image), text);
}

double clip_score(std::span<const Image> images, std::string_view prompt,
                  const TextEncoder& text_encoder, const ImageEncoder& image_encoder) {
  if (images.empty()) throw InvalidArgument("images", "must not be empty");
  if (text_encoder.dim() != image_encoder.dim()) {
    throw ShapeMismatch("text and image encoders disagree on embedding dimension");
  }
  const Embedding text = text_encoder.encode(prompt);
  double total = 0;
  for (const Image& im : images) total += clip_score(im, text, image_encoder);
  return total / static_cast<double>(images.size());
}

EncoderFeatures::EncoderFeatures(std::shared_ptr<const ImageEncoder> encoder)
    : encoder_(std::move(encoder)) {
  if (!encoder_) throw ModelLoadError("feature extractor needs an image encoder");
}

nn::Mat EncoderFeatures::features(std::span<const Image> images) const {
  nn::Mat out(static_cast<Eigen::Index>(images.size()), encoder_->dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Embedding e = encoder_->embed_image(images[i]);
    out.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(e.values.data(), e.dim());
  }
  return out;
}

SfidResult frechet_distance(const nn::Mat& a, const nn::Mat& b, SfidMode mode) {
  if (a.rows() == 0 || b.rows() == 0) throw InvalidArgument("features", "sets must be non-empty");
  if (a.cols() != b.cols()) throw ShapeMismatch("feature dimensions differ");
  const Moments ma = moments(a);
  const Moments mb = moments(b);
  SfidResult out;
  const double mean_term = (ma.mean - mb.mean).squaredNorm();
  bool diagonal = mode == SfidMode::kDiagonal;
  if (mode == SfidMode::kAuto &&
      (!well_conditioned(ma.cov, a.rows()) || !well_conditioned(mb.cov, b.rows()))) {
    diagonal = true;
    out.stabilized = true;
  }
  out.diagonal = diagonal;
  if (diagonal) {
    const Eigen::VectorXd sa = ma.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    const Eigen::VectorXd sb = mb.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.value = mean_term + (sa - sb).squaredNorm();
  } else {
    out.value = mean_term + ma.cov.trace() + mb.cov.trace() -
                2.0 * trace_sqrt_product(ma.cov, mb.cov);
  }
  out.value = std::max(out.value, 0.0);
  return out;
}

SfidResult sfid(std::span<const Image> a, std::span<const Image> b,
                const FeatureExtractor& extractor, SfidMode mode) {
  return frechet_distance(extractor.features(a), extractor.features(b), mode);
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeMismatch("mse: sizes differ");
  if (a.empty()) throw InvalidArgument("mse", "empty input");
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

double psnr(std::span<const double> a, std::span<const double> b, double peak) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrSentinel;
  return 10.0 * std::log10(peak * peak / e);
}

double psnr(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("psnr: shapes differ");
  std::vector<double> a8(a.size());
  std::vector<double> b8(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a8[i] = (a[i] + 1.0) * 127.5;
    b8[i] = (b[i] + 1.0) * 127.5;
  }
  return psnr(a8, b8, 255.0);
}

double outside_mse(const Image& x0, const Image& x_hat, const RegionMask& mask) {
  if (x0.shape() != x_hat.shape()) throw ShapeMismatch("outside_mse: shapes differ");
  if (mask.height() != x0.height() || mask.width() != x0.width()) {
    throw ShapeMismatch("outside_mse: mask plane differs");
  }
  double total = 0;
  std::size_t count = 0;
  const int c = x0.channels();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] != 0) continue;
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * static_cast<std::size_t>(c) + static_cast<std::size_t>(k);
      total += (x0[i] - x_hat[i]) * (x0[i] - x_hat[i]);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double preservation_lpips(const Image& x0, const Image& x_hat, const RegionMask& mask,
                          const PerceptualMetric& perceptual) {
  return perceptual.distance(apply_mask(x0, mask, true), apply_mask(x_hat, mask, true));
}

IhScore ih_score(const Image& x_hat, const RegionMask& mask, const Harmonizer* harmonizer) {
  IhScore out;
  if (harmonizer == nullptr) {
    out.identity_fallback = true;
    out.value = kPsnrSentinel;
    return out;
  }
  out.value = psnr(harmonizer->harmonize(x_hat, mask), x_hat);
  return out;
}

MetricReport evaluate(const EvaluationInputs& inputs, const Evaluators& ev) {
  const std::size_t n = inputs.edited.size();
  if (n == 0) throw InvalidArgument("edited", "no images to evaluate");
  if (inputs.originals.size() != n || inputs.masks.size() != n) {
    throw InvalidArgument("originals", "edited, original and mask counts differ");
  }
  if (!ev.text_encoder || !ev.image_encoder || !ev.perceptual || !ev.features) {
    throw InvalidArgument("evaluators", "missing encoder, perceptual metric or feature extractor");
  }
  MetricReport report;
  const Embedding text = ev.text_encoder->encode(inputs.prompt);
  const bool have_text = text.norm() > 0;
  if (!have_text) report.notes.push_back("empty prompt: clip_score not computed");
  for (std::size_t i = 0; i < n; ++i) {
    PerImageMetrics m;
    m.name = i < inputs.names.size() ? inputs.names[i] : std::to_string(i);
    if (have_text) m.clip_score = clip_score(inputs.edited[i], text, *ev.image_encoder);
    m.preservation_lpips =
        preservation_lpips(inputs.originals[i], inputs.edited[i], inputs.masks[i], *ev.perceptual);
    const IhScore ih = ih_score(inputs.edited[i], inputs.masks[i], ev.harmonizer);
    m.ih_score = ih.value;
    report.ih_identity_fallback = ih.identity_fallback;
    m.outside_mse = outside_mse(inputs.originals[i], inputs.edited[i], inputs.masks[i]);
    report.clip_score += m.clip_score / static_cast<double>(n);
    report.preservation_lpips += m.preservation_lpips / static_cast<double>(n);
    report.ih_score += m.ih_score / static_cast<double>(n);
    report.per_image.push_back(std::move(m));
  }
  const SfidResult s = sfid(inputs.edited, inputs.originals, *ev.features);
  report.sfid = s.value;
  report.sfid_diagonal = s.diagonal;
  report.sfid_stabilized = s.stabilized;
  if (s.stabilized) report.notes.push_back("sfid: singular covariance, diagonal mode engaged");
  if (report.ih_identity_fallback) {
    report.notes.push_back("ih_score: no harmonizer configured, identity fallback (sentinel)");
  }
  return report;
}

}  // namespace regionedit::metrics
