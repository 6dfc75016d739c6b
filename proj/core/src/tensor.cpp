#include "regionedit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "regionedit/rng.hpp"

namespace regionedit {

std::string Shape3::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

std::string PlaneShape::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width);
}

Image apply_mask(const Image& image, const RegionMask& mask, bool invert) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw ShapeMismatch("mask " + mask.shape().to_string() + " does not cover image " +
                        image.shape().to_string());
  }
  Image out(image.shape());
  const int c = image.channels();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const bool keep = invert ? mask[p] == 0 : mask[p] != 0;
    if (!keep) continue;
    for (int k = 0; k < c; ++k) out[p * c + k] = image[p * c + k];
  }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) throw InvalidArgument("size", "resize target must be positive");
  if (height == image.height() && width == image.width()) return image;
  Image out(Shape3{height, width, image.channels()});
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Rng::Rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  engine_.seed(seq);
}

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

int Rng::uniform_int(int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
}

Latent Rng::normal_latent(Shape3 shape) {
  Latent out(shape);
  for (double& v : out.storage()) v = normal();
  return out;
}

}  // namespace regionedit
