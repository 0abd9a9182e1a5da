#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlab/errors.hpp"
#include "nlab/numerics.hpp"
#include "nlab/rng.hpp"

namespace nlab::test {

// Kind of the nlab::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

template <typename F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// Random strictly positive probability vector of length k.
inline ProbVector random_probs(int k, Rng& rng, double spread = 4.0) {
  std::vector<double> logits(static_cast<std::size_t>(k));
  for (auto& z : logits) z = spread * rng.normal();
  return softmax(logits);
}

// Random row-stochastic matrix with diagonal mass at least `diag_floor`.
inline Matrix random_stochastic(int k, Rng& rng, double diag_floor = 0.5) {
  Matrix t(static_cast<std::size_t>(k), static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double diag = diag_floor + (1.0 - diag_floor) * rng.uniform() * 0.9;
    double rest = 0.0;
    std::vector<double> off(static_cast<std::size_t>(k), 0.0);
    for (int j = 0; j < k; ++j)
      if (j != i) rest += off[static_cast<std::size_t>(j)] = rng.uniform() + 0.01;
    for (int j = 0; j < k; ++j)
      t(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          j == i ? diag : (1.0 - diag) * off[static_cast<std::size_t>(j)] / rest;
  }
  return t;
}

}  // namespace nlab::test
