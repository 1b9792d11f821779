#include <benchmark/benchmark.h>

#include "gosvae/codec.hpp"
#include "gosvae/datagen.hpp"
#include "gosvae/nets.hpp"
#include "gosvae/ops.hpp"
#include "gosvae/rng.hpp"
#include "gosvae/task.hpp"
#include "gosvae/vq.hpp"

using namespace gosvae;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(std::move(shape), std::move(v));
}

void BM_Conv2dForward(benchmark::State& state) {
  set_precision(state.range(0) ? Precision::Double : Precision::Single);
  NoGradGuard ng;
  Tensor x = random_tensor({64, 64, 32}, 1);
  Tensor w = random_tensor({3, 3, 32, 32}, 2);
  Tensor b = random_tensor({32}, 3);
  for (auto _ : state) {
    Tensor y = ops::conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 64 * 64 * 9 * 32 * 32);
  set_precision(Precision::Single);
}
BENCHMARK(BM_Conv2dForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SegmenterStep(benchmark::State& state) {
  set_precision(Precision::Single);
  Network seg = build_segmenter(5, 7);
  LabeledScene scene = generate_scene(11, 64, 64, 5);
  for (auto _ : state) {
    Tensor loss = ops::cross_entropy_with_labels(seg.forward(scene.image), scene.labels);
    backward(loss);
    for (Parameter* p : seg.params()) p->tensor.zero_grad();
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_SegmenterStep)->Unit(benchmark::kMillisecond);

void BM_Quantize(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  Codebook cb = Codebook::init(K, 8, 3);
  Tensor z = random_tensor({16, 16, 8}, 4);
  for (auto _ : state) {
    IndexMap idx = quantize(z, cb);
    benchmark::DoNotOptimize(idx.idx.data());
  }
  state.SetItemsProcessed(state.iterations() * 16 * 16 * K);
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(512);

void BM_HuffmanRoundtrip(benchmark::State& state) {
  Rng rng(5);
  IndexMap idx;
  idx.h = 64;
  idx.w = 64;
  idx.K = 256;
  idx.idx.resize(4096);
  for (auto& v : idx.idx) v = static_cast<std::uint32_t>(rng.uniform_int(0, 40));
  PacketMeta meta{256, 256, 4, 256};
  for (auto _ : state) {
    Bytes packet = encode_packet(idx, meta, kCoderHuffman);
    auto [decoded, m] = decode_packet(packet);
    benchmark::DoNotOptimize(decoded.idx.data());
  }
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_HuffmanRoundtrip);

void BM_SceneGeneration(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    LabeledScene s = generate_scene(seed++, 64, 64, 5);
    benchmark::DoNotOptimize(s.image.values().data());
  }
}
BENCHMARK(BM_SceneGeneration);

}  // namespace

BENCHMARK_MAIN();
