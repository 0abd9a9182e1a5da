#include <benchmark/benchmark.h>

#include <vector>

#include "nlab/losses.hpp"
#include "nlab/noise.hpp"
#include "nlab/numerics.hpp"
#include "nlab/rng.hpp"

namespace {

std::vector<std::vector<double>> random_probs(std::size_t n, int k) {
  nlab::Rng rng(1);
  std::vector<std::vector<double>> out(n, std::vector<double>(static_cast<std::size_t>(k)));
  for (auto& p : out) {
    for (auto& v : p) v = 3.0 * rng.normal();
    p = nlab::softmax(p);
  }
  return out;
}

void run(benchmark::State& state, const nlab::LossSpec& spec, int k) {
  const auto probs = random_probs(1024, k);
  std::size_t i = 0;
  for (auto _ : state) {
    auto e = nlab::evaluate(spec, probs[i % probs.size()], static_cast<nlab::Label>(i % static_cast<std::size_t>(k)));
    benchmark::DoNotOptimize(e);
    ++i;
  }
}

void BM_CrossEntropy(benchmark::State& s) { run(s, nlab::CrossEntropy{}, static_cast<int>(s.range(0))); }
void BM_Mae(benchmark::State& s) { run(s, nlab::Mae{}, static_cast<int>(s.range(0))); }
void BM_Imae(benchmark::State& s) { run(s, nlab::Imae{}, static_cast<int>(s.range(0))); }

void BM_Forward(benchmark::State& s) {
  const int k = static_cast<int>(s.range(0));
  run(s, nlab::ForwardCorrected{nlab::symmetric_transition(k, 0.3)}, k);
}

void BM_Backward(benchmark::State& s) {
  const int k = static_cast<int>(s.range(0));
  run(s, nlab::BackwardCorrected(nlab::BaseLoss::ce, nlab::symmetric_transition(k, 0.3)), k);
}

}  // namespace

BENCHMARK(BM_CrossEntropy)->Arg(3)->Arg(10);
BENCHMARK(BM_Mae)->Arg(3)->Arg(10);
BENCHMARK(BM_Imae)->Arg(3)->Arg(10);
BENCHMARK(BM_Forward)->Arg(3)->Arg(10);
BENCHMARK(BM_Backward)->Arg(3)->Arg(10);
