#include "regionedit/codec.hpp"

#include <algorithm>
#include <cmath>

#include "regionedit/models.hpp"
#include "regionedit/nn/ops.hpp"

namespace regionedit {

Image Codec::decode(const Latent& latent) const {
  nn::NoGradGuard no_grad;
  nn::Var rows = decode_rows(nn::constant(to_rows(latent)), latent.shape());
  Image image = image_from_rows(rows.value(), image_shape_for(latent.shape()));
  for (double& v : image.storage()) v = std::clamp(v, -1.0, 1.0);
  return image;
}

Shape3 Codec::latent_shape_for(Shape3 image_shape) const {
  const int f = downsample_factor();
  if (image_shape.height % f != 0 || image_shape.width % f != 0) {
    throw InvalidArgument("image", "size " + image_shape.to_string() +
                                       " is not a multiple of the codec factor " +
                                       std::to_string(f));
  }
  return {image_shape.height / f, image_shape.width / f, latent_channels()};
}

Shape3 Codec::image_shape_for(Shape3 latent_shape) const {
  const int f = downsample_factor();
  return {latent_shape.height * f, latent_shape.width * f, 3};
}

Latent IdentityCodec::encode(const Image& image) const {
  return Latent(image.shape(), image.storage());
}

nn::Var IdentityCodec::decode_rows(const nn::Var& latent_rows, Shape3) const {
  return latent_rows;
}

Image conform_to_codec(const Image& image, const Codec& codec, ResizePolicy policy) {
  const int f = codec.downsample_factor();
  if (image.height() % f == 0 && image.width() % f == 0) return image;
  if (policy == ResizePolicy::kReject) {
    // Raises the descriptive error.
    (void)codec.latent_shape_for(image.shape());
  }
  const int h = (image.height() + f - 1) / f * f;
  const int w = (image.width() + f - 1) / f * f;
  return resize_bilinear(image, h, w);
}

LatentMask mask_to_latent(const RegionMask& mask, PlaneShape latent_plane) {
  if (latent_plane.height <= 0 || latent_plane.width <= 0) {
    throw InvalidArgument("latent_shape", "must be positive");
  }
  const double sy = static_cast<double>(mask.height()) / latent_plane.height;
  const double sx = static_cast<double>(mask.width()) / latent_plane.width;
  LatentMask out(latent_plane);
  for (int i = 0; i < latent_plane.height; ++i) {
    const double y_lo = i * sy;
    const double y_hi = (i + 1) * sy;
    for (int j = 0; j < latent_plane.width; ++j) {
      const double x_lo = j * sx;
      const double x_hi = (j + 1) * sx;
      double covered = 0.0;
      double set = 0.0;
      for (int y = static_cast<int>(std::floor(y_lo)); y < std::min<double>(std::ceil(y_hi), mask.height()); ++y) {
        const double wy = std::min<double>(y + 1, y_hi) - std::max<double>(y, y_lo);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(std::floor(x_lo)); x < std::min<double>(std::ceil(x_hi), mask.width()); ++x) {
          const double wx = std::min<double>(x + 1, x_hi) - std::max<double>(x, x_lo);
          if (wx <= 0) continue;
          covered += wy * wx;
          if (mask.at(y, x) != 0) set += wy * wx;
        }
      }
      out.at(i, j) = (covered > 0 && set / covered >= 0.5 - 1e-12) ? 1 : 0;
    }
  }
  return out;
}

}  // namespace regionedit
