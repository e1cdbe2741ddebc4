#include <benchmark/benchmark.h>

#include "samdetr/aligner.hpp"
#include "samdetr/matching.hpp"
#include "samdetr/model.hpp"
#include "samdetr/nn.hpp"
#include "samdetr/ops.hpp"
#include "samdetr/scene.hpp"
#include "samdetr/train.hpp"

using namespace samdetr;

namespace {

Tensor noise(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::from(std::move(shape), std::move(v));
}

void BM_Conv2d(benchmark::State& state) {
  Rng rng(1);
  const auto side = static_cast<std::size_t>(state.range(0));
  Tensor x = noise({32, side, side}, rng), k = noise({64, 32, 3, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 2, 1));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

void BM_Attention(benchmark::State& state) {
  Rng rng(2);
  ParameterSet ps;
  AttentionParams p = make_attention(ps, "a", 64, 8, rng);
  Tensor q = noise({16, 64}, rng), k = noise({64, 64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(multi_head_attention(q, q, k, k, k, p).out);
}
BENCHMARK(BM_Attention);

void BM_Hungarian(benchmark::State& state) {
  Rng rng(3);
  CostMatrix c(16, 6);
  for (double& v : c.values) v = rng.uniform(0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(c));
}
BENCHMARK(BM_Hungarian);

// forward + loss + backward on one scene, default model size
void BM_TrainImage(benchmark::State& state) {
  ModelConfig mc;
  mc.variant = static_cast<Variant>(state.range(0));
  Model model(mc, 4);
  SceneSample scene = generate_scene(9, scene_config_for(mc));
  for (auto _ : state) {
    Graph g;
    GraphScope scope(g);
    DetectionLoss loss = image_loss(model, scene);
    backward(loss.total);
    model.parameters().zero_grad();
  }
}
BENCHMARK(BM_TrainImage)
    ->Arg(static_cast<int>(Variant::kBaseline))
    ->Arg(static_cast<int>(Variant::kSam))
    ->Arg(static_cast<int>(Variant::kSamSmca))
    ->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
