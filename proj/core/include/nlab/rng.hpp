#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nlab {

// Counter-based generator: draw n of stream `key` is splitmix64(key + n * golden).
// The output depends only on (key, counter), so streams are bit-reproducible on every
// platform with 64-bit unsigned arithmetic. split() derives a child key by mixing the
// parent key with a stream id; children never share the parent's counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_open0() noexcept { return 1.0 - uniform(); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) noexcept;
  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept;

  Rng split(std::uint64_t stream) const noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t draws() const noexcept { return counter_; }

 private:
  Rng(std::uint64_t key, int) noexcept : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Independent child seed for a named sub-task of a seeded run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Fisher-Yates shuffle driven by `rng`.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace nlab
