#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "regionedit/tensor.hpp"

namespace regionedit {

// 8-bit <-> [-1, 1] conversions used at every file boundary.
double from_8bit(int value);
int to_8bit(double value);  // rounded and clamped to 0..255

// PNG codecs. Decoding accepts any PNG and converts it to RGB (alpha is
// composited onto black); throws InvalidArgument("image", ...) when the
// bytes are not a PNG. Encoding is deterministic.
Image decode_png(std::string_view bytes);
std::string encode_png(const Image& image);
// Binary masks are written as 0/255 grayscale; decoding treats >= 128 as set.
std::string encode_png(const RegionMask& mask);
RegionMask decode_mask_png(std::string_view bytes);
// Soft masks are rounded onto 0..255 grayscale.
std::string encode_png(const SoftMask& soft);

Image read_png(const std::filesystem::path& path);
RegionMask read_mask_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const RegionMask& mask);
void write_png(const std::filesystem::path& path, const SoftMask& soft);

}  // namespace regionedit
