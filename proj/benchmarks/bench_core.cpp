// Microbenchmarks for the hot paths: convolution, gated fusion, mask IOU,
// dense decoding, and the full detector forward pass.

#include <benchmark/benchmark.h>

#include <vector>

#include "mmr/fusion.hpp"
#include "mmr/geometry.hpp"
#include "mmr/layers.hpp"
#include "mmr/mcscore.hpp"
#include "mmr/model.hpp"
#include "mmr/rng.hpp"
#include "mmr/synthdata.hpp"

namespace {

using namespace mmr;

Tensor random_tensor(int c, int h, int w, Rng& rng) {
  Tensor t(c, h, w);
  for (double& v : t.v) v = rng.normal();
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  Rng rng(1);
  Conv2d conv(16, 32, 3, 1, 1);
  conv.init_he(rng);
  const Tensor x = random_tensor(16, 48, 48, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x));
  }
}
BENCHMARK(BM_ConvForward)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  Rng rng(2);
  Conv2d conv(16, 32, 3, 1, 1);
  conv.init_he(rng);
  const Tensor x = random_tensor(16, 48, 48, rng);
  const Tensor gy = random_tensor(32, 48, 48, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.backward(x, gy));
  }
}
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond);

void BM_Fuse(benchmark::State& state) {
  Rng rng(3);
  const int levels = static_cast<int>(state.range(0));
  FusionParams params = FusionParams::create(2, 32, levels, rng);
  for (auto& per_level : params.gate)
    for (auto& conv : per_level) conv.init_he(rng);
  std::vector<FeaturePyramid> in(2);
  for (auto& pyramid : in) {
    for (int j = 0; j < levels; ++j) {
      pyramid.levels.push_back(random_tensor(32, 48 >> j, 48 >> j, rng));
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fuse(params, in, nullptr));
  }
}
BENCHMARK(BM_Fuse)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_FuseBackward(benchmark::State& state) {
  Rng rng(4);
  FusionParams params = FusionParams::create(2, 32, 3, rng);
  for (auto& per_level : params.gate)
    for (auto& conv : per_level) conv.init_he(rng);
  std::vector<FeaturePyramid> in(2);
  FeaturePyramid gout;
  for (int j = 0; j < 3; ++j) {
    in[0].levels.push_back(random_tensor(32, 48 >> j, 48 >> j, rng));
    in[1].levels.push_back(random_tensor(32, 48 >> j, 48 >> j, rng));
    gout.levels.push_back(random_tensor(32, 48 >> j, 48 >> j, rng));
  }
  FuseContext ctx;
  fuse(params, in, &ctx);
  for (auto _ : state) {
    params.visit([](ParamTensor& p) { p.zero_grad(); });
    benchmark::DoNotOptimize(fuse_backward(params, ctx, gout));
  }
}
BENCHMARK(BM_FuseBackward)->Unit(benchmark::kMillisecond);

void BM_MaskIou(benchmark::State& state) {
  Rng rng(5);
  const int side = static_cast<int>(state.range(0));
  Mask a(side, side), b(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      if (rng.uniform() < 0.4) a.set(y, x);
      if (rng.uniform() < 0.4) b.set(y, x);
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(mask_iou(a, b));
  }
}
BENCHMARK(BM_MaskIou)->Arg(96)->Arg(256)->Unit(benchmark::kMicrosecond);

SceneSample bench_scene(int image_size) {
  GeneratorConfig config;
  config.image_size = image_size;
  config.objects_min = 3;
  config.objects_max = 3;
  config.seed = 17;
  config.scenes = 10;
  config.novel_scenes = 0;
  return generate_dataset(config).second.front();
}

void BM_ForwardDense(benchmark::State& state) {
  ArchConfig arch;
  DetectorParams params = DetectorParams::create(arch, 7);
  const SceneSample scene = bench_scene(96);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_dense(params, scene.rgb, scene.depth,
                                           ModalityCondition::kBoth, nullptr));
  }
}
BENCHMARK(BM_ForwardDense)->Unit(benchmark::kMillisecond);

void BM_DecodeInstances(benchmark::State& state) {
  ArchConfig arch;
  DetectorParams params = DetectorParams::create(arch, 7);
  const SceneSample scene = bench_scene(96);
  const DenseMaps maps = forward_dense(params, scene.rgb, scene.depth,
                                       ModalityCondition::kBoth, nullptr);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_instances(arch, maps));
  }
}
BENCHMARK(BM_DecodeInstances)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
