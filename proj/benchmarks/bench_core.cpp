#include <benchmark/benchmark.h>

#include "mcpmix/boundary_metrics.hpp"
#include "mcpmix/featspace.hpp"
#include "mcpmix/segnet.hpp"
#include "mcpmix/synthgen.hpp"

namespace bm = benchmark;
using namespace mcpmix;

namespace {

std::vector<PairedTriplet> desk_batch(std::size_t n) {
  GenConfig gen;
  std::vector<PairedTriplet> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_triplet(gen, {7, i}));
  return out;
}

}  // namespace

static void BM_SegnetForward(bm::State& st) {
  const auto t = desk_batch(1).front();
  const auto model = SegModel::random(3, static_cast<std::size_t>(st.range(0)), {1, 0});
  for (auto _ : st) bm::DoNotOptimize(forward(model, t.real));
}
BENCHMARK(BM_SegnetForward)->Arg(8)->Arg(16)->Unit(bm::kMicrosecond);

static void BM_SegnetBackward(bm::State& st) {
  const auto t = desk_batch(1).front();
  const auto model = SegModel::random(3, static_cast<std::size_t>(st.range(0)), {1, 0});
  for (auto _ : st) bm::DoNotOptimize(backward(model, t.real, t.mask));
}
BENCHMARK(BM_SegnetBackward)->Arg(8)->Arg(16)->Unit(bm::kMicrosecond);

static void BM_ExtractorFeatures(bm::State& st) {
  const auto t = desk_batch(1).front();
  const FrozenExtractor ex({}, {0, 1});
  for (auto _ : st) bm::DoNotOptimize(ex.features(t.real));
}
BENCHMARK(BM_ExtractorFeatures)->Unit(bm::kMicrosecond);

static void BM_MmdInputGradient(bm::State& st) {
  const auto batch = desk_batch(static_cast<std::size_t>(st.range(0)));
  std::vector<ImageTensor> xs, ys;
  for (const auto& t : batch) {
    xs.push_back(t.synthetic);
    ys.push_back(t.real);
  }
  const FrozenExtractor ex({}, {0, 1});
  const double bw = median_bandwidth(extract(ex, ys));
  for (auto _ : st) bm::DoNotOptimize(mmd_input_gradient(xs, ys, ex, bw));
}
BENCHMARK(BM_MmdInputGradient)->Arg(4)->Arg(8)->Unit(bm::kMicrosecond);

static void BM_SynthesizeCounterpart(bm::State& st) {
  const auto t = desk_batch(1).front();
  const GenConfig gen;
  std::uint64_t k = 0;
  for (auto _ : st) bm::DoNotOptimize(synthesize_counterpart(t.real, t.mask, gen, {3, k++}));
}
BENCHMARK(BM_SynthesizeCounterpart)->Unit(bm::kMicrosecond);

static void BM_DistanceField(bm::State& st) {
  const auto t = desk_batch(1).front();
  const auto boundary = boundary_extract(t.mask);
  for (auto _ : st) bm::DoNotOptimize(distance_field(boundary, t.mask.height(), t.mask.width()));
}
BENCHMARK(BM_DistanceField)->Unit(bm::kMicrosecond);

static void BM_EvaluatePair(bm::State& st) {
  const auto batch = desk_batch(2);
  for (auto _ : st) bm::DoNotOptimize(evaluate_pair(batch[0].mask, batch[1].mask));
}
BENCHMARK(BM_EvaluatePair)->Unit(bm::kMicrosecond);

BENCHMARK_MAIN();
