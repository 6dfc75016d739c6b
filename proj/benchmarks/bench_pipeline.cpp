// Timings on untrained models; only the compute graph matters here.
#include <benchmark/benchmark.h>

#include "regionedit/calibration.hpp"
#include "regionedit/guidance.hpp"
#include "regionedit/metrics.hpp"
#include "regionedit/sampler.hpp"
#include "regionedit/toyzoo/bundle.hpp"
#include "regionedit/toyzoo/dataset.hpp"

namespace {

using namespace regionedit;

const ModelBundle& bundle() {
  static const ModelBundle b = toyzoo::make_untrained_bundle(1);
  return b;
}

const toyzoo::ShapeSample& sample() {
  static const toyzoo::ShapeSample s = toyzoo::generate_dataset(1, 5)[0];
  return s;
}

void BM_EditSteps(benchmark::State& state) {
  EditParams p;
  p.steps = static_cast<int>(state.range(0));
  p.threshold = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_edit(sample().image, "a square", "a blue circle", p, bundle()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EditSteps)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Segment(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(segment(sample().image, "a red square", *bundle().text_encoder, *bundle().segmenter));
  }
}
BENCHMARK(BM_Segment)->Unit(benchmark::kMicrosecond);

void BM_ObjectiveGradient(benchmark::State& state) {
  const ModelBundle& m = bundle();
  const Latent z = m.codec->encode(sample().image);
  const Embedding target = m.text_encoder->encode("a blue circle");
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_objective(z, *m.codec, sample().image, target, sample().gt_mask, {},
                                                *m.image_encoder, *m.perceptual, {}, true));
  }
}
BENCHMARK(BM_ObjectiveGradient)->Unit(benchmark::kMicrosecond);

void BM_FrechetDistance(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(2, Stream::kSuite);
  nn::Mat a(256, d);
  nn::Mat b(256, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = rng.normal();
    b.data()[i] = rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(a, b, metrics::SfidMode::kFull));
}
BENCHMARK(BM_FrechetDistance)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
