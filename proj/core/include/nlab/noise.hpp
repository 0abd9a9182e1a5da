#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/matrix.hpp"
#include "nlab/rng.hpp"

namespace nlab {

// Row-stochastic K x K matrix, t(i, j) = p(observed = j | true = i).
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  // Validates shape, range and row sums (1e-9).
  explicit TransitionMatrix(Matrix t);

  static TransitionMatrix identity(int k);
  static TransitionMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    return TransitionMatrix(Matrix::from_rows(rows));
  }

  int k() const noexcept { return static_cast<int>(t_.rows()); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return t_(i, j); }
  std::span<const double> row(std::size_t i) const noexcept { return t_.row(i); }
  const Matrix& matrix() const noexcept { return t_; }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  Matrix t_;
};

void to_json(nlohmann::json& j, const TransitionMatrix& t);
void from_json(const nlohmann::json& j, TransitionMatrix& t);

// Diagonal 1 - rho, off-diagonal rho / (K - 1).
TransitionMatrix symmetric_transition(int k, double rho);

// Class-conditional corruption. Output true_labels are the input labels (or the input's
// true_labels when present); features are copied bit-exactly.
LabeledDataset inject(const LabeledDataset& ds, const TransitionMatrix& t, Rng& rng);

struct FeatureNoiseParams {
  double rho_max = 0.3;
  double beta = 0.25;
};

// Flip probability of sample i as a function of its centroid margin.
double feature_flip_probability(double margin, const FeatureNoiseParams& params) noexcept;

struct CentroidMargins {
  std::vector<double> margin;     // dist to nearest other centroid - dist to own centroid
  std::vector<Label> nearest_other;
};

// Centroids are the per-class means of the true (or observed, if no truth) labels.
CentroidMargins centroid_margins(const LabeledDataset& ds);

// Each sample flips to its nearest other-class centroid's class with probability
// rho_max * exp(-beta * margin).
LabeledDataset feature_dependent_inject(const LabeledDataset& ds, const FeatureNoiseParams& params,
                                        Rng& rng);

// annotator_labels[i][a] ~ confusions[a].row(true_i), drawn independently.
LabeledDataset simulate_annotators(const LabeledDataset& ds,
                                   const std::vector<TransitionMatrix>& confusions, Rng& rng);

// Raw count matrix of (reference, noisy) pairs.
Matrix confusion_counts(std::span<const std::pair<Label, Label>> pairs, int k);
Matrix confusion_counts(std::span<const Label> reference, std::span<const Label> noisy, int k);

// t(i, j) = (count(i->j) + laplace) / (count(i->.) + K * laplace).
TransitionMatrix estimate_transition(std::span<const std::pair<Label, Label>> pairs, int k,
                                     double laplace = 1.0);
TransitionMatrix estimate_transition(std::span<const Label> reference, std::span<const Label> noisy,
                                     int k, double laplace = 1.0);

// Max over rows of the row-wise l1 distance.
double max_row_l1(const TransitionMatrix& a, const TransitionMatrix& b);
double mean_row_l1(const TransitionMatrix& a, const TransitionMatrix& b);

struct SymmetricNoise {
  double rho = 0.0;
};
struct MatrixNoise {
  TransitionMatrix t;
};
struct FeatureNoise {
  FeatureNoiseParams params;
};
struct NoNoise {};

struct NoiseSpec {
  std::variant<NoNoise, SymmetricNoise, MatrixNoise, FeatureNoise> kind;
  std::uint64_t seed = 0;
};

void validate(const NoiseSpec& spec, int k);
// Applies the spec; the transition that generated the corruption is returned when one exists.
LabeledDataset apply_noise(const LabeledDataset& ds, const NoiseSpec& spec);
std::optional<TransitionMatrix> generating_transition(const NoiseSpec& spec, int k);

}  // namespace nlab
