#include "nlab/noise.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "nlab/numerics.hpp"

namespace nlab {

TransitionMatrix::TransitionMatrix(Matrix t) : t_(std::move(t)) {
  require(t_.rows() == t_.cols() && t_.rows() >= 1, ErrorKind::invalid_parameter,
          "transition matrix must be square and non-empty");
  for (std::size_t i = 0; i < t_.rows(); ++i)
    require(is_prob_vector(t_.row(i)), ErrorKind::invalid_parameter,
            "transition matrix row " + std::to_string(i) + " is not a probability vector");
}

TransitionMatrix TransitionMatrix::identity(int k) {
  return TransitionMatrix(Matrix::identity(static_cast<std::size_t>(k)));
}

void to_json(nlohmann::json& j, const TransitionMatrix& t) {
  j = nlohmann::json{{"k", t.k()}, {"rows", t.matrix().to_rows()}};
}

void from_json(const nlohmann::json& j, TransitionMatrix& t) {
  t = TransitionMatrix::from_rows(j.at("rows").get<std::vector<std::vector<double>>>());
  if (j.contains("k"))
    require(j.at("k").get<int>() == t.k(), ErrorKind::parse,
            "transition JSON: k does not match row count");
}

TransitionMatrix symmetric_transition(int k, double rho) {
  require(k >= 2, ErrorKind::invalid_parameter, "symmetric_transition: K must be >= 2");
  require(rho >= 0.0 && rho < 1.0, ErrorKind::invalid_parameter,
          "symmetric_transition: rho must lie in [0, 1)");
  const auto n = static_cast<std::size_t>(k);
  Matrix t(n, n, rho / static_cast<double>(k - 1));
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0 - rho;
  return TransitionMatrix(std::move(t));
}

namespace {

const Labels& truth_of(const LabeledDataset& ds) {
  return ds.true_labels ? *ds.true_labels : ds.labels;
}

}  // namespace

LabeledDataset inject(const LabeledDataset& ds, const TransitionMatrix& t, Rng& rng) {
  require(t.k() == ds.num_classes, ErrorKind::invalid_parameter,
          "inject: transition has " + std::to_string(t.k()) + " classes, dataset has " +
              std::to_string(ds.num_classes));
  LabeledDataset out = ds;
  out.true_labels = truth_of(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = static_cast<std::size_t>((*out.true_labels)[i]);
    out.labels[i] = static_cast<Label>(sample_categorical(t.row(y), rng));
  }
  return out;
}

double feature_flip_probability(double margin, const FeatureNoiseParams& p) noexcept {
  return p.rho_max * std::exp(-p.beta * margin);
}

CentroidMargins centroid_margins(const LabeledDataset& ds) {
  const Labels& truth = truth_of(ds);
  const auto k = static_cast<std::size_t>(ds.num_classes);
  const std::size_t d = ds.dims();
  Matrix centroids(k, d);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    ++counts[c];
    for (std::size_t j = 0; j < d; ++j) centroids(c, j) += ds.features(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j)
      if (counts[c] > 0) centroids(c, j) /= static_cast<double>(counts[c]);

  CentroidMargins out;
  out.margin.resize(ds.size());
  out.nearest_other.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto own = static_cast<std::size_t>(truth[i]);
    double own_dist = 0.0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = own == 0 ? 1 : 0;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = ds.features(i, j) - centroids(c, j);
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      if (c == own) {
        own_dist = dist;
      } else if (counts[c] > 0 && dist < best) {
        best = dist;
        best_c = c;
      }
    }
    out.margin[i] = best - own_dist;
    out.nearest_other[i] = static_cast<Label>(best_c);
  }
  return out;
}

LabeledDataset feature_dependent_inject(const LabeledDataset& ds, const FeatureNoiseParams& p,
                                        Rng& rng) {
  require(p.rho_max >= 0.0 && p.rho_max < 1.0, ErrorKind::invalid_parameter,
          "feature noise: rho_max must lie in [0, 1)");
  require(p.beta >= 0.0, ErrorKind::invalid_parameter, "feature noise: beta must be >= 0");
  const CentroidMargins m = centroid_margins(ds);
  LabeledDataset out = ds;
  out.true_labels = truth_of(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // Probability can exceed rho_max only for negative margins; cap at 1.
    const double prob = std::min(1.0, feature_flip_probability(m.margin[i], p));
    const bool flip = rng.uniform() < prob;
    out.labels[i] = flip ? m.nearest_other[i] : (*out.true_labels)[i];
  }
  return out;
}

LabeledDataset simulate_annotators(const LabeledDataset& ds,
                                   const std::vector<TransitionMatrix>& confusions, Rng& rng) {
  require(!confusions.empty(), ErrorKind::invalid_parameter,
          "simulate_annotators: need at least one annotator");
  for (const auto& c : confusions)
    require(c.k() == ds.num_classes, ErrorKind::invalid_parameter,
            "simulate_annotators: confusion class count differs from dataset");
  LabeledDataset out = ds;
  out.true_labels = truth_of(ds);
  std::vector<Labels> ann(ds.size(), Labels(confusions.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = static_cast<std::size_t>((*out.true_labels)[i]);
    for (std::size_t a = 0; a < confusions.size(); ++a)
      ann[i][a] = static_cast<Label>(sample_categorical(confusions[a].row(y), rng));
  }
  out.annotator_labels = std::move(ann);
  return out;
}

Matrix confusion_counts(std::span<const std::pair<Label, Label>> pairs, int k) {
  const auto n = static_cast<std::size_t>(k);
  Matrix counts(n, n);
  for (const auto& [ref, noisy] : pairs) {
    require(ref >= 0 && ref < k && noisy >= 0 && noisy < k, ErrorKind::invalid_input,
            "confusion_counts: label outside [0, K)");
    counts(static_cast<std::size_t>(ref), static_cast<std::size_t>(noisy)) += 1.0;
  }
  return counts;
}

Matrix confusion_counts(std::span<const Label> reference, std::span<const Label> noisy, int k) {
  require(reference.size() == noisy.size(), ErrorKind::shape,
          "confusion_counts: label vectors differ in length");
  std::vector<std::pair<Label, Label>> pairs(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) pairs[i] = {reference[i], noisy[i]};
  return confusion_counts(pairs, k);
}

namespace {

TransitionMatrix normalize_counts(const Matrix& counts, double laplace) {
  require(laplace >= 0.0, ErrorKind::invalid_parameter, "estimate_transition: laplace must be >= 0");
  const std::size_t k = counts.rows();
  Matrix t(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += counts(i, j);
    const double denom = total + static_cast<double>(k) * laplace;
    if (denom <= 0.0)
      fail(ErrorKind::degenerate_row,
           "estimate_transition: reference class " + std::to_string(i) + " has no pairs");
    for (std::size_t j = 0; j < k; ++j) t(i, j) = (counts(i, j) + laplace) / denom;
  }
  return TransitionMatrix(std::move(t));
}

}  // namespace

TransitionMatrix estimate_transition(std::span<const std::pair<Label, Label>> pairs, int k,
                                     double laplace) {
  require(k >= 1, ErrorKind::invalid_parameter, "estimate_transition: K must be >= 1");
  return normalize_counts(confusion_counts(pairs, k), laplace);
}

TransitionMatrix estimate_transition(std::span<const Label> reference, std::span<const Label> noisy,
                                     int k, double laplace) {
  return normalize_counts(confusion_counts(reference, noisy, k), laplace);
}

double max_row_l1(const TransitionMatrix& a, const TransitionMatrix& b) {
  require(a.k() == b.k(), ErrorKind::shape, "max_row_l1: class counts differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(a.k()); ++i)
    worst = std::max(worst, l1_distance(a.row(i), b.row(i)));
  return worst;
}

double mean_row_l1(const TransitionMatrix& a, const TransitionMatrix& b) {
  require(a.k() == b.k(), ErrorKind::shape, "mean_row_l1: class counts differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(a.k()); ++i)
    sum += l1_distance(a.row(i), b.row(i));
  return sum / static_cast<double>(a.k());
}

void validate(const NoiseSpec& spec, int k) {
  std::visit(
      [k](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SymmetricNoise>) {
          require(v.rho >= 0.0 && v.rho < 1.0, ErrorKind::invalid_parameter,
                  "noise: rho must lie in [0, 1)");
        } else if constexpr (std::is_same_v<T, MatrixNoise>) {
          require(v.t.k() == k, ErrorKind::invalid_parameter,
                  "noise: transition class count differs from dataset");
        } else if constexpr (std::is_same_v<T, FeatureNoise>) {
          require(v.params.rho_max >= 0.0 && v.params.rho_max < 1.0 && v.params.beta >= 0.0,
                  ErrorKind::invalid_parameter, "noise: need rho_max in [0, 1) and beta >= 0");
        }
      },
      spec.kind);
}

std::optional<TransitionMatrix> generating_transition(const NoiseSpec& spec, int k) {
  if (const auto* s = std::get_if<SymmetricNoise>(&spec.kind)) return symmetric_transition(k, s->rho);
  if (const auto* m = std::get_if<MatrixNoise>(&spec.kind)) return m->t;
  if (std::holds_alternative<NoNoise>(spec.kind)) return TransitionMatrix::identity(k);
  return std::nullopt;
}

LabeledDataset apply_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  validate(spec, ds.num_classes);
  Rng rng(spec.seed);
  if (const auto* f = std::get_if<FeatureNoise>(&spec.kind))
    return feature_dependent_inject(ds, f->params, rng);
  if (std::holds_alternative<NoNoise>(spec.kind)) {
    LabeledDataset out = ds;
    if (!out.true_labels) out.true_labels = out.labels;
    return out;
  }
  return inject(ds, *generating_transition(spec, ds.num_classes), rng);
}

}  // namespace nlab
