#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "regionedit/nn/layers.hpp"

namespace regionedit::nn {

// weights.bin layout (little endian):
//   "REWT" u32 version=1, u32 count,
//   count x { u32 name_len, name bytes, u32 rows, u32 cols, rows*cols f64 }
std::vector<char> serialize_parameters(const ParameterSet& params);
// Overwrites parameter values in place. Names, order and shapes must match.
void deserialize_parameters(const std::vector<char>& bytes, const ParameterSet& params);

std::string sha256_hex(const std::vector<char>& bytes);

std::vector<char> read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace regionedit::nn
