#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nlab/matrix.hpp"
#include "nlab/rng.hpp"

namespace nlab {

// A probability vector over K classes. Validity is checked by is_prob_vector().
using ProbVector = std::vector<double>;

inline constexpr double kProbTolerance = 1e-9;

bool is_prob_vector(std::span<const double> p, double tol = kProbTolerance) noexcept;

// Max-subtracted softmax. Throws invalid_input on non-finite logits.
ProbVector softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);

std::size_t argmax(std::span<const double> v) noexcept;

// Draws j with probability p[j]; advances rng by exactly one draw.
std::size_t sample_categorical(std::span<const double> p, Rng& rng) noexcept;

// Symmetric Beta(alpha, alpha) via Johnk's rejection algorithm in log space.
double sample_beta(double alpha, Rng& rng);
// General Beta(a, b) by the same method.
double sample_beta(double a, double b, Rng& rng);

// Gauss-Jordan inverse with partial pivoting; throws singular_matrix on a zero pivot.
Matrix inverse(const Matrix& m);
double norm1(const Matrix& m) noexcept;
// 1-norm condition number; +inf when singular.
double condition_number(const Matrix& m);
// Solves A x = b for square A.
std::vector<double> solve(const Matrix& a, std::span<const double> b);

double l1_distance(std::span<const double> a, std::span<const double> b) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

}  // namespace nlab
