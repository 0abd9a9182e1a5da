#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "nlab/io.hpp"
#include "nlab/matrix.hpp"
#include "nlab/numerics.hpp"
#include "nlab/rng.hpp"

using namespace nlab;
using nlab::test::error_kind;

TEST_SUITE("numerics") {

TEST_CASE("softmax of equal logits is uniform") {
  const auto p = softmax(std::vector<double>{0, 0, 0});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax hand evaluation") {
  const auto p = softmax(std::vector<double>{0, std::log(3.0)});
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax survives huge logits") {
  const auto p = softmax(std::vector<double>{1000, 1000, -1000});
  CHECK(is_prob_vector(p));
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[2] == 0.0);
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK(error_kind([] { softmax(std::vector<double>{0, NAN}); }) == ErrorKind::invalid_input);
  CHECK(error_kind([] { softmax(std::vector<double>{0, INFINITY}); }) == ErrorKind::invalid_input);
}

TEST_CASE("property: softmax is a valid distribution and shift invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(9));
    std::vector<double> z(static_cast<std::size_t>(k));
    for (auto& v : z) v = 30.0 * rng.normal();
    const double shift = rng.uniform(-50.0, 50.0);
    std::vector<double> zs = z;
    for (auto& v : zs) v += shift;
    const auto p = softmax(z);
    const auto q = softmax(zs);
    REQUIRE(is_prob_vector(p));
    for (std::size_t j = 0; j < p.size(); ++j) CHECK(std::abs(p[j] - q[j]) <= 1e-12);
  }
}

TEST_CASE("sample_categorical with a degenerate vector") {
  Rng rng(3);
  const std::vector<double> p{1, 0, 0};
  for (int i = 0; i < 1000; ++i) CHECK(sample_categorical(p, rng) == 0);
}

TEST_CASE("sample_categorical fair coin within three binomial sigmas") {
  Rng rng(7);
  const std::vector<double> p{0.5, 0.5};
  const int n = 100000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) zeros += sample_categorical(p, rng) == 0;
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(zeros / double(n) - 0.5) <= 3 * sigma);
}

TEST_CASE("sample_categorical consumes one draw") {
  Rng rng(1);
  const std::vector<double> p{0.2, 0.3, 0.5};
  sample_categorical(p, rng);
  CHECK(rng.draws() == 1);
}

TEST_CASE("sample_categorical never picks a zero-probability class") {
  Rng rng(19);
  const std::vector<double> p{0.3, 0.0, 0.7, 0.0};
  for (int i = 0; i < 20000; ++i) {
    const auto j = sample_categorical(p, rng);
    CHECK((j == 0 || j == 2));
  }
}

TEST_CASE("sample_beta support and moments at alpha 0.2") {
  Rng rng(5);
  const int n = 100000;
  const double alpha = 0.2;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_beta(alpha, rng);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const double expected_var = 1.0 / (4.0 * (2 * alpha + 1));
  CHECK(expected_var == doctest::Approx(0.178571).epsilon(1e-5));
  CHECK(std::abs(mean - 0.5) < 0.01);
  CHECK(std::abs(var - expected_var) / expected_var < 0.10);
}

TEST_CASE("sample_beta general shapes match the mean a/(a+b)") {
  Rng rng(8);
  const int n = 50000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += sample_beta(2.0, 5.0, rng);
  CHECK(std::abs(sum / n - 2.0 / 7.0) < 0.005);
}

TEST_CASE("sample_beta rejects non-positive alpha") {
  Rng rng(1);
  CHECK(error_kind([&] { sample_beta(0.0, rng); }) == ErrorKind::invalid_parameter);
  CHECK(error_kind([&] { sample_beta(-1.0, rng); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("splitmix64 matches the reference output") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("Rng stream is frozen") {
  // Independent evaluation of the counter construction documented in rng.hpp.
  Rng rng(42);
  CHECK(rng.next_u64() == 0x6fdd427b0f140d54ULL);
  CHECK(rng.next_u64() == 0xbf6cf8f8ac52b0baULL);
  CHECK(rng.next_u64() == 0xd83c6ac6b950755aULL);
}

TEST_CASE("equal seeds give equal first 10^4 draws") {
  Rng a(123), b(123), c(124);
  int same_as_c = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    same_as_c += x == c.next_u64();
  }
  CHECK(same_as_c == 0);
}

TEST_CASE("split streams do not overlap the parent or each other") {
  Rng parent(9);
  Rng s1 = parent.split(1), s2 = parent.split(2);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    seen.insert(parent.next_u64());
    seen.insert(s1.next_u64());
    seen.insert(s2.next_u64());
  }
  CHECK(seen.size() == 15000);
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}

TEST_CASE("uniform range and below bounds") {
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_open0() > 0.0);
    CHECK(rng.below(7) < 7);
  }
  CHECK(rng.below(1) == 0);
}

TEST_CASE("permutation is a permutation") {
  Rng rng(2);
  auto p = permutation(100, rng);
  std::sort(p.begin(), p.end());
  std::vector<std::size_t> id(100);
  std::iota(id.begin(), id.end(), std::size_t{0});
  CHECK(p == id);
}

TEST_CASE("inverse of a 2x2 matches the closed form") {
  const auto t = Matrix::from_rows({{0.8, 0.2}, {0.3, 0.7}});
  const auto inv = inverse(t);
  CHECK(inv(0, 0) == doctest::Approx(1.4));
  CHECK(inv(0, 1) == doctest::Approx(-0.4));
  CHECK(inv(1, 0) == doctest::Approx(-0.6));
  CHECK(inv(1, 1) == doctest::Approx(1.6));
}

TEST_CASE("property: inverse times matrix is the identity") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(6));
    const auto t = nlab::test::random_stochastic(k, rng, 0.6);
    const auto inv = inverse(t);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        double s = 0;
        for (int m = 0; m < k; ++m) s += t(i, m) * inv(m, j);
        CHECK(std::abs(s - (i == j ? 1.0 : 0.0)) < 1e-10);
      }
  }
}

TEST_CASE("singular matrices") {
  const auto s = Matrix::from_rows({{1, 2}, {2, 4}});
  CHECK(error_kind([&] { inverse(s); }) == ErrorKind::singular_matrix);
  CHECK(std::isinf(condition_number(s)));
  CHECK(condition_number(Matrix::identity(4)) == doctest::Approx(1.0));
  CHECK(error_kind([] { inverse(Matrix(2, 3)); }) == ErrorKind::shape);
}

TEST_CASE("solve") {
  const auto a = Matrix::from_rows({{2, 1}, {1, 3}});
  const auto x = solve(a, std::vector<double>{3, 5});
  CHECK(x[0] == doctest::Approx(0.8));
  CHECK(x[1] == doctest::Approx(1.4));
}

TEST_CASE("matrix construction checks its shape") {
  CHECK(error_kind([] { Matrix(2, 2, std::vector<double>{1, 2, 3}); }) == ErrorKind::shape);
  const auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.transposed()(2, 1) == 6);
  CHECK(m.to_rows()[1][0] == 4);
}

TEST_CASE("format_double round-trips") {
  Rng rng(77);
  for (int i = 0; i < 2000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
}

}  // TEST_SUITE
