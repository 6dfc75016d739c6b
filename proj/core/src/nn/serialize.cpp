#include "regionedit/nn/serialize.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "regionedit/error.hpp"

namespace regionedit::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "weights.bin assumes little endian");

void put_u32(std::vector<char>& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.insert(out.end(), buf, buf + 4);
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ModelLoadError("weights.bin truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize_parameters(const ParameterSet& params) {
  std::vector<char> out{'R', 'E', 'W', 'T'};
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, v] : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(v.rows()));
    put_u32(out, static_cast<std::uint32_t>(v.cols()));
    const char* data = reinterpret_cast<const char*>(v.value().data());
    out.insert(out.end(), data, data + v.value().size() * sizeof(double));
  }
  return out;
}

void deserialize_parameters(const std::vector<char>& bytes, const ParameterSet& params) {
  Reader in(bytes);
  char magic[4];
  in.take(magic, 4);
  if (std::memcmp(magic, "REWT", 4) != 0) throw ModelLoadError("weights.bin: bad magic");
  if (in.u32() != 1) throw ModelLoadError("weights.bin: unsupported version");
  const std::uint32_t count = in.u32();
  if (count != params.entries().size()) {
    throw ModelLoadError("weights.bin: expected " + std::to_string(params.entries().size()) +
                         " tensors, found " + std::to_string(count));
  }
  for (const auto& [name, v] : params.entries()) {
    std::string stored(in.u32(), '\0');
    in.take(stored.data(), stored.size());
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (stored != name || rows != v.rows() || cols != v.cols()) {
      throw ModelLoadError("weights.bin: tensor '" + stored + "' does not match '" + name + "'");
    }
    Var handle = v;
    in.take(handle.mutable_value().data(), static_cast<std::size_t>(rows) * cols * sizeof(double));
  }
  if (!in.done()) throw ModelLoadError("weights.bin: trailing bytes");
}

std::string sha256_hex(const std::vector<char>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes) {
  static std::atomic<unsigned long> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace regionedit::nn
