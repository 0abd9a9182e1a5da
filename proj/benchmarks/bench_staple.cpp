#include <benchmark/benchmark.h>

#include <vector>

#include "nlab/annotators.hpp"
#include "nlab/noise.hpp"
#include "nlab/rng.hpp"

namespace {

std::vector<nlab::Labels> simulated(std::size_t n, std::size_t annotators, int k) {
  nlab::Rng rng(7);
  const auto t = nlab::symmetric_transition(k, 0.25);
  std::vector<nlab::Labels> out(n, nlab::Labels(annotators));
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = i % static_cast<std::size_t>(k);
    for (auto& a : out[i]) a = static_cast<nlab::Label>(nlab::sample_categorical(t.row(y), rng));
  }
  return out;
}

void BM_Staple(benchmark::State& state) {
  const auto ann = simulated(static_cast<std::size_t>(state.range(0)), 5, 3);
  for (auto _ : state) {
    auto r = nlab::staple(ann, 3);
    benchmark::DoNotOptimize(r.fused.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MajorityVote(benchmark::State& state) {
  const auto ann = simulated(static_cast<std::size_t>(state.range(0)), 5, 3);
  for (auto _ : state) {
    auto r = nlab::majority_vote_all(ann);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Staple)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MajorityVote)->Arg(1000)->Arg(10000);
