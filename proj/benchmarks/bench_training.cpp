#include <benchmark/benchmark.h>

#include "nlab/dataset.hpp"
#include "nlab/trainer.hpp"

namespace {

// One epoch of minibatch SGD over 3000 samples.
void BM_Epoch(benchmark::State& state) {
  const auto ds = nlab::gen_blobs({3, 1000, 8, 4.0, 1}).training_view();
  nlab::TrainConfig cfg;
  cfg.epochs = 1;
  if (state.range(0) > 0) cfg.arch = nlab::ArchSpec{nlab::ArchKind::mlp, static_cast<std::size_t>(state.range(0)), 1.0};
  for (auto _ : state) {
    auto r = nlab::train(ds, cfg);
    benchmark::DoNotOptimize(r.params);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}

}  // namespace

BENCHMARK(BM_Epoch)->Arg(0)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
