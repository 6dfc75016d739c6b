#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regionedit/error.hpp"

namespace regionedit {

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  int pixels() const noexcept { return height * width; }
  std::string to_string() const;

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct PlaneShape {
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::string to_string() const;

  friend bool operator==(const PlaneShape&, const PlaneShape&) = default;
};

// Dense HWC tensor of doubles. The tag keeps images and latents from being
// mixed up at API boundaries; both share the same row-major layout so that
// (H*W) x C matrix views are free.
template <class Tag>
class Grid {
 public:
  Grid() = default;
  explicit Grid(Shape3 shape, double fill = 0.0) : shape_(shape), values_(shape.size(), fill) {}
  Grid(Shape3 shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw ShapeMismatch("grid of shape " + shape_.to_string() + " given " +
                          std::to_string(values_.size()) + " values");
    }
  }

  const Shape3& shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return values_.size(); }

  double& at(int y, int x, int c) { return values_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return values_[index(y, x, c)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  Shape3 shape_{};
  std::vector<double> values_;
};

struct ImageTag {};
struct LatentTag {};

// Pixel values in [-1, 1]; [0, 255] only at file boundaries.
using Image = Grid<ImageTag>;
// Standardized latent values, unbounded.
using Latent = Grid<LatentTag>;

// Single-channel map over a plane.
template <class T, class Tag>
class Plane {
 public:
  Plane() = default;
  explicit Plane(PlaneShape shape, T fill = T{}) : shape_(shape), values_(shape.size(), fill) {}
  Plane(PlaneShape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw ShapeMismatch("plane of shape " + shape_.to_string() + " given " +
                          std::to_string(values_.size()) + " values");
    }
  }

  const PlaneShape& shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return values_.size(); }

  T& at(int y, int x) { return values_[static_cast<std::size_t>(y) * shape_.width + x]; }
  T at(int y, int x) const { return values_[static_cast<std::size_t>(y) * shape_.width + x]; }
  T& operator[](std::size_t i) { return values_[i]; }
  T operator[](std::size_t i) const { return values_[i]; }

  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& storage() noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  PlaneShape shape_{};
  std::vector<T> values_;
};

struct RegionMaskTag {};
struct LatentMaskTag {};
struct SoftMaskTag {};

// Binary pixel mask (values 0/1). 1 marks the region to edit.
using RegionMask = Plane<std::uint8_t, RegionMaskTag>;
// Binary mask at latent resolution, broadcast across latent channels.
using LatentMask = Plane<std::uint8_t, LatentMaskTag>;
// Pre-threshold segmentation map on the 0..255 scale.
using SoftMask = Plane<double, SoftMaskTag>;

template <class T, class Tag>
double area_fraction(const Plane<T, Tag>& mask) {
  if (mask.size() == 0) return 0.0;
  std::size_t set = 0;
  for (T v : mask.values()) set += (v != T{}) ? 1 : 0;
  return static_cast<double>(set) / static_cast<double>(mask.size());
}

// x (.) m, broadcasting the mask across channels. `invert` uses (1 - m).
Image apply_mask(const Image& image, const RegionMask& mask, bool invert = false);

// Bilinear resize used when an input does not fit a model's geometry.
Image resize_bilinear(const Image& image, int height, int width);

template <class Tag>
bool Grid<Tag>::all_finite() const noexcept {
  for (double v : values_) {
    if (!(v - v == 0.0)) return false;
  }
  return true;
}

}  // namespace regionedit
