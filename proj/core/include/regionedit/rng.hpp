#pragma once

#include <cstdint>
#include <random>

#include "regionedit/tensor.hpp"

namespace regionedit {

// Every random draw in the library goes through a stream derived from a
// user seed and a fixed purpose id, so that e.g. the reverse-process noise
// and the input-chain noise never share state.
enum class Stream : std::uint64_t {
  kInitialLatent = 1,
  kReverseNoise = 2,
  kInputChain = 3,
  kDataset = 10,
  kInit = 11,
  kBatchOrder = 12,
  kTrainingNoise = 13,
  kHoldout = 14,
  kSuite = 15,
  kEvaluator = 16,
};

class Rng {
 public:
  Rng(std::uint64_t seed, Stream stream);

  std::uint64_t next_u64() { return engine_(); }
  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi_inclusive);
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  Latent normal_latent(Shape3 shape);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace regionedit
