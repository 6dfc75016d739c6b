#pragma once

#include <string>

#include "regionedit/nn/autodiff.hpp"
#include "regionedit/tensor.hpp"

namespace regionedit {

// What to do with an image whose sides are not multiples of the codec's
// downsampling factor.
enum class ResizePolicy { kReject, kResize };

// Autoencoder boundary between pixel space and the latent space the
// diffusion runs in.
class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::string name() const = 0;
  virtual int downsample_factor() const = 0;
  virtual int latent_channels() const = 0;

  virtual Latent encode(const Image& image) const = 0;
  // Output clamped to [-1, 1].
  Image decode(const Latent& latent) const;
  // Differentiable decode of one latent given as (h*w) x c rows. Returns
  // unclamped (H*W) x 3 rows.
  virtual nn::Var decode_rows(const nn::Var& latent_rows, Shape3 latent_shape) const = 0;

  // Throws InvalidArgument if the image size is not a multiple of the factor.
  Shape3 latent_shape_for(Shape3 image_shape) const;
  Shape3 image_shape_for(Shape3 latent_shape) const;
};

// z = x. Reconstruction is exact, which makes the sampler's preservation
// guarantees checkable bit-for-bit.
class IdentityCodec final : public Codec {
 public:
  std::string name() const override { return "identity"; }
  int downsample_factor() const override { return 1; }
  int latent_channels() const override { return 3; }
  Latent encode(const Image& image) const override;
  nn::Var decode_rows(const nn::Var& latent_rows, Shape3 latent_shape) const override;
};

// Makes `image` acceptable to `codec`: returned unchanged when compatible;
// otherwise bilinearly resized to the next multiple (kResize) or rejected.
Image conform_to_codec(const Image& image, const Codec& codec, ResizePolicy policy);

// Area-average the pixel mask down to the latent plane, then re-binarize:
// a latent cell is set iff at least half of its covered pixel area is set.
LatentMask mask_to_latent(const RegionMask& mask, PlaneShape latent_plane);

}  // namespace regionedit
