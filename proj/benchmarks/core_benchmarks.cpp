#include <benchmark/benchmark.h>

#include "prismer/dataset.hpp"
#include "prismer/ops.hpp"
#include "prismer/rng.hpp"
#include "prismer/training.hpp"

namespace {

using namespace prismer;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal();
  return Tensor::from(std::move(shape), std::move(values));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1);
  const auto b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto stride = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({side, side, 8}, 3);
  const auto k = random_tensor({3, 3, 8, 16}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, stride));
}
BENCHMARK(BM_Conv2d)->Args({32, 1})->Args({64, 2});

// One optimiser step of the desk configuration on a captioning batch.
void BM_TrainStep(benchmark::State& state) {
  DatasetSpec spec;
  spec.scenes = 8;
  spec.experts = {ExpertKind::kDepth, ExpertKind::kSegmentation};
  const auto records = make_records(spec, ExpertPipeline::create(spec.pipeline_seed()));
  const auto examples = make_examples(records, TaskKind::kCaptioning);
  auto model_config = ModelConfig::desk();
  PrismerModel model(model_config, 5);
  TrainConfig train;
  train.warmup_steps = 0;
  train.total_steps = 1;
  train.batch_size = 8;
  for (auto _ : state) benchmark::DoNotOptimize(train_loop(model, examples, train));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
