#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "nlab/dataset.hpp"
#include "nlab/metrics.hpp"
#include "nlab/noise.hpp"

using namespace nlab;
using nlab::test::error_kind;

namespace {

bool row_stochastic(const TransitionMatrix& t) {
  for (int i = 0; i < t.k(); ++i) {
    double s = 0;
    for (double v : t.row(static_cast<std::size_t>(i))) {
      if (v < 0 || v > 1) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) return false;
  }
  return true;
}

// n_per_class rows of a trivial one-feature dataset, labels clean.
LabeledDataset plain(int k, std::size_t n_per_class) {
  LabeledDataset ds;
  ds.num_classes = k;
  ds.features = Matrix(n_per_class * static_cast<std::size_t>(k), 1);
  for (int c = 0; c < k; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      ds.features(ds.labels.size(), 0) = static_cast<double>(ds.labels.size());
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace

TEST_SUITE("noise") {

TEST_CASE("symmetric_transition formula") {
  const auto t = symmetric_transition(3, 0.3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(t(i, j) == doctest::Approx(i == j ? 0.7 : 0.15).epsilon(1e-15));
  CHECK(symmetric_transition(4, 0.0) == TransitionMatrix::identity(4));
}

TEST_CASE("symmetric_transition validates") {
  CHECK(error_kind([] { symmetric_transition(3, 1.0); }) == ErrorKind::invalid_parameter);
  CHECK(error_kind([] { symmetric_transition(3, -0.1); }) == ErrorKind::invalid_parameter);
  CHECK(error_kind([] { symmetric_transition(1, 0.1); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("property: symmetric rows sum to one") {
  Rng gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(gen.below(20));
    CHECK(row_stochastic(symmetric_transition(k, gen.uniform() * 0.999)));
  }
}

TEST_CASE("TransitionMatrix rejects non-stochastic rows") {
  CHECK(error_kind([] { TransitionMatrix::from_rows({{0.5, 0.4}, {0.5, 0.5}}); }).has_value());
  CHECK(error_kind([] { TransitionMatrix::from_rows({{1.2, -0.2}, {0.5, 0.5}}); }).has_value());
  CHECK(error_kind([] { TransitionMatrix::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}); }).has_value());
}

TEST_CASE("TransitionMatrix json shape") {
  const auto t = symmetric_transition(2, 0.25);
  const nlohmann::json j = t;
  CHECK(j.at("k") == 2);
  CHECK(j.at("rows")[0][1] == 0.25);
  CHECK(j.get<TransitionMatrix>() == t);
}

TEST_CASE("inject with identity keeps labels") {
  const auto ds = gen_blobs({3, 30, 2, 8.0, 1});
  Rng rng(1);
  const auto out = inject(ds, TransitionMatrix::identity(3), rng);
  CHECK(out.labels == ds.labels);
  CHECK(*out.true_labels == ds.labels);
}

TEST_CASE("inject flip rate within three binomial sigmas") {
  const auto ds = plain(2, 5000);
  Rng rng(3);
  const auto out = inject(ds, symmetric_transition(2, 0.3), rng);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) flips += out.labels[i] != ds.labels[i];
  const double n = static_cast<double>(ds.size());
  CHECK(std::abs(flips / n - 0.3) <= 3 * std::sqrt(0.3 * 0.7 / n));
  CHECK(3 * std::sqrt(0.3 * 0.7 / n) == doctest::Approx(0.0137).epsilon(0.01));
}

TEST_CASE("inject empirical rows converge to T") {
  const auto t = TransitionMatrix::from_rows({{0.7, 0.2, 0.1}, {0.05, 0.9, 0.05}, {0.3, 0.0, 0.7}});
  const auto ds = plain(3, 10000);
  Rng rng(4);
  const auto out = inject(ds, t, rng);
  const auto est = estimate_transition(*out.true_labels, out.labels, 3, 0.0);
  CHECK(max_row_l1(est, t) < 0.03);
}

TEST_CASE("inject preserves features and truth; per-class rates match") {
  Rng gen(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 + static_cast<int>(gen.below(4));
    const double rho = gen.uniform(0.05, 0.5);
    auto ds = gen_blobs({k, 2000, 3, 4.0, gen.next_u64()});
    Rng rng(gen.next_u64());
    const auto out = inject(ds, symmetric_transition(k, rho), rng);
    CHECK(out.features == ds.features);
    CHECK(*out.true_labels == *ds.true_labels);
    for (int c = 0; c < k; ++c) {
      double n = 0, flips = 0;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.labels[i] == c) n += 1, flips += out.labels[i] != c;
      CHECK(std::abs(flips / n - rho) <= 3 * std::sqrt(rho * (1 - rho) / n));
    }
    // Re-injecting a noisy set draws from the truth, not the observed labels.
    const auto again = inject(out, TransitionMatrix::identity(k), rng);
    CHECK(again.labels == *ds.true_labels);
  }
}

TEST_CASE("inject rejects a class-count mismatch") {
  const auto ds = gen_blobs({3, 5, 2, 8.0, 1});
  Rng rng(1);
  CHECK(error_kind([&] { inject(ds, symmetric_transition(2, 0.1), rng); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("feature noise: beta 0 flips at rho_max to the nearest other class") {
  const auto ds = gen_blobs({3, 3000, 2, 6.0, 5});
  Rng rng(6);
  const auto out = feature_dependent_inject(ds, {0.3, 0.0}, rng);
  const auto m = centroid_margins(ds);
  double flips = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (out.labels[i] != ds.labels[i]) {
      flips += 1;
      CHECK(out.labels[i] == m.nearest_other[i]);
    }
  const double n = static_cast<double>(ds.size());
  CHECK(std::abs(flips / n - 0.3) <= 3 * std::sqrt(0.21 / n));
}

TEST_CASE("feature noise: rho_max 0 never flips") {
  const auto ds = gen_blobs({2, 500, 2, 8.0, 5});
  Rng rng(6);
  CHECK(feature_dependent_inject(ds, {0.0, 0.25}, rng).labels == ds.labels);
}

TEST_CASE("feature noise: boundary decile flips more than the far decile") {
  const auto ds = gen_blobs({2, 2500, 2, 8.0, 7});
  Rng rng(8);
  const auto out = feature_dependent_inject(ds, {0.3, 0.25}, rng);
  const auto m = centroid_margins(ds);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return m.margin[a] < m.margin[b]; });
  const std::size_t decile = ds.size() / 10;
  double near = 0, far = 0;
  for (std::size_t r = 0; r < decile; ++r) {
    near += out.labels[order[r]] != ds.labels[order[r]];
    far += out.labels[order[ds.size() - 1 - r]] != ds.labels[order[ds.size() - 1 - r]];
  }
  CHECK(near > far);
  CHECK(*out.true_labels == ds.labels);
}

TEST_CASE("feature flip probability formula") {
  CHECK(feature_flip_probability(0.0, {0.3, 0.25}) == doctest::Approx(0.3));
  CHECK(feature_flip_probability(4.0, {0.3, 0.25}) == doctest::Approx(0.3 * std::exp(-1.0)));
  CHECK(feature_flip_probability(4.0, {0.3, 0.0}) == doctest::Approx(0.3));
}

TEST_CASE("feature noise validates") {
  const auto ds = gen_blobs({2, 5, 2, 8.0, 1});
  Rng rng(1);
  CHECK(error_kind([&] { feature_dependent_inject(ds, {1.0, 0.2}, rng); }) == ErrorKind::invalid_parameter);
  CHECK(error_kind([&] { feature_dependent_inject(ds, {0.2, -1.0}, rng); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("identity annotators copy the truth") {
  const auto ds = gen_blobs({3, 20, 2, 8.0, 1});
  Rng rng(2);
  const std::vector<TransitionMatrix> conf(4, TransitionMatrix::identity(3));
  const auto out = simulate_annotators(ds, conf, rng);
  REQUIRE(out.annotator_labels);
  CHECK(out.num_annotators() == 4);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (Label y : (*out.annotator_labels)[i]) CHECK(y == ds.labels[i]);
}

TEST_CASE("annotator error rates and independence") {
  const auto ds = plain(2, 5000);
  Rng rng(10);
  const std::vector<TransitionMatrix> conf(3, symmetric_transition(2, 0.2));
  const auto out = simulate_annotators(ds, conf, rng);
  const double n = static_cast<double>(ds.size());
  std::vector<std::vector<double>> err(3, std::vector<double>(ds.size()));
  for (std::size_t a = 0; a < 3; ++a) {
    double e = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) e += err[a][i] = (*out.annotator_labels)[i][a] != ds.labels[i];
    CHECK(std::abs(e / n - 0.2) <= 0.012);
  }
  const auto corr = [&](const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
  };
  CHECK(std::abs(corr(err[0], err[1])) <= 0.02);
  CHECK(std::abs(corr(err[0], err[2])) <= 0.02);
}

TEST_CASE("simulate_annotators rejects mismatched K") {
  const auto ds = gen_blobs({3, 5, 2, 8.0, 1});
  Rng rng(1);
  const std::vector<TransitionMatrix> conf{symmetric_transition(2, 0.1)};
  CHECK(error_kind([&] { simulate_annotators(ds, conf, rng); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("estimate_transition from counts") {
  std::vector<std::pair<Label, Label>> pairs;
  for (int i = 0; i < 8; ++i) pairs.emplace_back(0, 0);
  for (int i = 0; i < 2; ++i) pairs.emplace_back(0, 1);
  pairs.emplace_back(1, 0);
  for (int i = 0; i < 9; ++i) pairs.emplace_back(1, 1);
  const auto t = estimate_transition(pairs, 2, 0.0);
  CHECK(t(0, 0) == doctest::Approx(0.8));
  CHECK(t(0, 1) == doctest::Approx(0.2));
  CHECK(t(1, 0) == doctest::Approx(0.1));
  CHECK(t(1, 1) == doctest::Approx(0.9));
  const auto smoothed = estimate_transition(pairs, 2, 1.0);
  CHECK(smoothed(0, 0) == doctest::Approx(9.0 / 12));
}

TEST_CASE("estimate_transition smoothing limit and empty rows") {
  const std::vector<std::pair<Label, Label>> none;
  const auto t = estimate_transition(none, 4, 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(t(i, j) == doctest::Approx(0.25));
  CHECK(error_kind([&] { estimate_transition(none, 4, 0.0); }) == ErrorKind::degenerate_row);
  CHECK(error_kind([&] { estimate_transition(none, 4, -1.0); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("estimate_transition recovers a known T at 10^4 per class") {
  Rng rng(12);
  const auto t = TransitionMatrix(nlab::test::random_stochastic(4, rng));
  std::vector<std::pair<Label, Label>> pairs;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 10000; ++i)
      pairs.emplace_back(c, static_cast<Label>(sample_categorical(t.row(static_cast<std::size_t>(c)), rng)));
  const auto est = estimate_transition(pairs, 4, 1.0);
  CHECK(row_stochastic(est));
  CHECK(max_row_l1(est, t) < 0.03);
}

TEST_CASE("apply_noise dispatches and reports the generating transition") {
  const auto ds = gen_blobs({3, 50, 2, 8.0, 1});
  NoiseSpec spec{SymmetricNoise{0.2}, 9};
  const auto out = apply_noise(ds, spec);
  CHECK(apply_noise(ds, spec) == out);
  CHECK(generating_transition(spec, 3) == symmetric_transition(3, 0.2));
  CHECK_FALSE(generating_transition(NoiseSpec{FeatureNoise{}, 1}, 3).has_value());
  CHECK(apply_noise(ds, NoiseSpec{NoNoise{}, 1}).labels == ds.labels);
  CHECK(error_kind([] { validate(NoiseSpec{SymmetricNoise{1.5}, 1}, 3); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("flip indicators compare observed with truth") {
  const auto ds = gen_blobs({2, 200, 2, 8.0, 1});
  Rng rng(2);
  const auto out = inject(ds, symmetric_transition(2, 0.25), rng);
  const auto flips = flip_indicators(out);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(flips[i] == (out.labels[i] != ds.labels[i]));
}

}  // TEST_SUITE
