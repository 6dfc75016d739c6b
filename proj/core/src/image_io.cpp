#include "regionedit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "regionedit/nn/serialize.hpp"

namespace regionedit {

namespace {

std::vector<unsigned char> decode_raw(std::string_view bytes, png_uint_32 format, int channels,
                                      int* height, int* width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    throw InvalidArgument("image", std::string("not a valid PNG: ") + image.message);
  }
  image.format = format;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(image.width) * image.height *
                                    static_cast<std::size_t>(channels));
  png_color black{0, 0, 0};
  if (png_image_finish_read(&image, &black, pixels.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw InvalidArgument("image", "corrupt PNG: " + message);
  }
  *height = static_cast<int>(image.height);
  *width = static_cast<int>(image.width);
  return pixels;
}

std::string encode_raw(const std::vector<unsigned char>& pixels, int height, int width,
                       png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr) == 0) {
    throw Error(std::string("PNG encoding failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr) == 0) {
    throw Error(std::string("PNG encoding failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  const std::vector<char> bytes = nn::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

double from_8bit(int value) { return value / 127.5 - 1.0; }

int to_8bit(double value) {
  return static_cast<int>(std::lround(std::clamp((value + 1.0) * 127.5, 0.0, 255.0)));
}

Image decode_png(std::string_view bytes) {
  int h = 0;
  int w = 0;
  const auto pixels = decode_raw(bytes, PNG_FORMAT_RGB, 3, &h, &w);
  Image out(Shape3{h, w, 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = from_8bit(pixels[i]);
  return out;
}

std::string encode_png(const Image& image) {
  if (image.channels() != 3) throw InvalidArgument("image", "PNG export needs 3 channels");
  std::vector<unsigned char> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) pixels[i] = static_cast<unsigned char>(to_8bit(image[i]));
  return encode_raw(pixels, image.height(), image.width(), PNG_FORMAT_RGB);
}

std::string encode_png(const RegionMask& mask) {
  std::vector<unsigned char> pixels(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) pixels[i] = mask[i] != 0 ? 255 : 0;
  return encode_raw(pixels, mask.height(), mask.width(), PNG_FORMAT_GRAY);
}

RegionMask decode_mask_png(std::string_view bytes) {
  int h = 0;
  int w = 0;
  const auto pixels = decode_raw(bytes, PNG_FORMAT_GRAY, 1, &h, &w);
  RegionMask out(PlaneShape{h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = pixels[i] >= 128 ? 1 : 0;
  return out;
}

std::string encode_png(const SoftMask& soft) {
  std::vector<unsigned char> pixels(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i) {
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(soft[i], 0.0, 255.0)));
  }
  return encode_raw(pixels, soft.height(), soft.width(), PNG_FORMAT_GRAY);
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_text(path)); }

RegionMask read_mask_png(const std::filesystem::path& path) {
  return decode_mask_png(read_text(path));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  nn::write_file_atomic(path, encode_png(image));
}

void write_png(const std::filesystem::path& path, const RegionMask& mask) {
  nn::write_file_atomic(path, encode_png(mask));
}

void write_png(const std::filesystem::path& path, const SoftMask& soft) {
  nn::write_file_atomic(path, encode_png(soft));
}

}  // namespace regionedit
