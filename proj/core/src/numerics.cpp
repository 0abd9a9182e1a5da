#include "nlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace nlab {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_parameter: return "invalid-parameter";
    case ErrorKind::shape: return "shape";
    case ErrorKind::parse: return "parse";
    case ErrorKind::singular_matrix: return "singular-matrix";
    case ErrorKind::degenerate_row: return "degenerate-row";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::config_validation: return "config-validation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == cols, ErrorKind::shape, "ragged rows in matrix literal");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

std::vector<std::vector<double>> Matrix::to_rows() const {
  std::vector<std::vector<double>> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r].assign(row(r).begin(), row(r).end());
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool is_prob_vector(std::span<const double> p, double tol) noexcept {
  if (p.empty()) return false;
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= -tol && v <= 1.0 + tol)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  require(out.size() == logits.size() && !logits.empty(), ErrorKind::shape,
          "softmax: output length must equal input length");
  double hi = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    require(std::isfinite(z), ErrorKind::invalid_input, "softmax: non-finite logit");
    hi = std::max(hi, z);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - hi);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
}

ProbVector softmax(std::span<const double> logits) {
  ProbVector out(logits.size());
  softmax_into(logits, out);
  return out;
}

std::size_t argmax(std::span<const double> v) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

std::size_t sample_categorical(std::span<const double> p, Rng& rng) noexcept {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) last_positive = j;
    acc += p[j];
    if (u < acc) return j;
  }
  // Rounding left u above the cumulative total.
  return last_positive;
}

double sample_beta(double a, double b, Rng& rng) {
  require(a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b),
          ErrorKind::invalid_parameter, "beta: shape parameters must be positive");
  // Johnk: accept X=U^(1/a), Y=V^(1/b) when X+Y <= 1 and return X/(X+Y).
  // Worked in logs so small shapes (a=0.2 gives U^5) do not underflow.
  for (;;) {
    const double log_x = std::log(rng.uniform_open0()) / a;
    const double log_y = std::log(rng.uniform_open0()) / b;
    const double hi = std::max(log_x, log_y);
    const double log_sum = hi + std::log(std::exp(log_x - hi) + std::exp(log_y - hi));
    if (log_sum <= 0.0) {
      return std::exp(log_x - log_sum);
    }
  }
}

double sample_beta(double alpha, Rng& rng) {
  require(alpha > 0.0, ErrorKind::invalid_parameter, "beta: alpha must be positive");
  return sample_beta(alpha, alpha, rng);
}

Matrix inverse(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorKind::shape, "inverse: matrix must be square");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) fail(ErrorKind::singular_matrix, "inverse: matrix is singular");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(pivot, c), a(col, c));
        std::swap(inv(pivot, c), inv(col, c));
      }
    }
    const double d = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= d;
      inv(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

double norm1(const Matrix& m) noexcept {
  double best = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += std::abs(m(r, c));
    best = std::max(best, s);
  }
  return best;
}

double condition_number(const Matrix& m) {
  try {
    return norm1(m) * norm1(inverse(m));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::singular_matrix) return std::numeric_limits<double>::infinity();
    throw;
  }
}

std::vector<double> solve(const Matrix& a, std::span<const double> b) {
  require(a.rows() == b.size(), ErrorKind::shape, "solve: right-hand side length mismatch");
  const Matrix inv = inverse(a);
  std::vector<double> x(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) x[r] = dot(inv.row(r), b);
  return x;
}

double l1_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace nlab
