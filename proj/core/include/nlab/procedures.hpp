#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/metrics.hpp"
#include "nlab/model.hpp"
#include "nlab/numerics.hpp"
#include "nlab/rng.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

// ---------------------------------------------------------------------------
// Label store

struct Provenance {
  bool relabeled = false;
  std::size_t epoch = 0;  // 0 for original labels
  std::string source;     // who produced the label, e.g. "a", "b", "both", "meta"

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct StoredLabel {
  std::variant<Label, ProbVector> value;
  Provenance provenance;

  bool is_soft() const noexcept { return std::holds_alternative<ProbVector>(value); }
};

// Per-sample hard-or-soft training targets with an audit trail. Provenance only moves
// forward: an original label can be relabeled, a relabel can be replaced by a later one.
class SoftLabelStore {
 public:
  SoftLabelStore() = default;
  SoftLabelStore(const Labels& labels, int num_classes);

  std::size_t size() const noexcept { return entries_.size(); }
  int num_classes() const noexcept { return k_; }
  const StoredLabel& operator[](std::size_t i) const { return entries_.at(i); }

  void set_hard(std::size_t i, Label label, std::size_t epoch, std::string source);
  void set_soft(std::size_t i, ProbVector label, std::size_t epoch, std::string source);

  // Argmax for soft entries (ties to the lowest class).
  Label hard_label(std::size_t i) const;
  Labels hard_labels() const;
  // One-hot for hard entries.
  ProbVector target(std::size_t i) const;
  // CE against hard entries, KL against soft ones; gradient w.r.t. logits.
  LossEval loss(std::size_t i, std::span<const double> probs) const;

  // Fraction of entries whose hard label equals truth.
  double agreement(std::span<const Label> truth) const;
  std::size_t relabeled_count() const;

 private:
  void check_forward(std::size_t i, std::size_t epoch) const;

  int k_ = 0;
  std::vector<StoredLabel> entries_;
};

void to_json(nlohmann::json& j, const SoftLabelStore& store);

// ---------------------------------------------------------------------------
// Mixup

struct MixupBatch {
  Matrix features;
  Matrix targets;  // soft labels, one row per synthetic sample
  std::vector<double> lambdas;
  std::vector<std::size_t> partners;
};

Matrix one_hot(std::span<const Label> labels, int k);

// x~ = lambda x_i + (1 - lambda) x_j and y~ = lambda y_i + (1 - lambda) y_j.
void mix_pair(std::span<const double> xi, std::span<const double> yi, std::span<const double> xj,
              std::span<const double> yj, double lambda, std::span<double> x_out,
              std::span<double> y_out);

// Pairs row i with row partners[i] of a seeded shuffle; one lambda ~ Beta(alpha, alpha) per pair.
MixupBatch mixup(const Matrix& features, const Matrix& targets, double alpha, Rng& rng);

TrainResult train_mixup(const LabeledDataset& data, const TrainConfig& config, double alpha,
                        const LabeledDataset* test = nullptr);

// ---------------------------------------------------------------------------
// Peer-model procedures

struct PeerModels {
  ModelParams a;
  ModelParams b;
};

// Indices (into `batch`) of the round(keep_fraction * n) smallest losses, at least one;
// ties keep the earlier position.
std::vector<std::size_t> small_loss_selection(std::span<const double> losses, double keep_fraction);

struct CoTeachStepStats {
  std::vector<std::size_t> chosen_by_a;  // the samples B trains on
  std::vector<std::size_t> chosen_by_b;  // the samples A trains on
};

// Both selections are computed before either model is updated.
CoTeachStepStats co_teach_step(PeerModels& models, const LabeledDataset& data,
                               std::span<const std::size_t> batch, double keep_fraction,
                               const LossSpec& loss, double learning_rate);

struct CoTeachSchedule {
  std::size_t warmup_epochs = 5;
  std::size_t ramp_epochs = 10;
  double noise_rate = 0.3;  // estimated rho; final keep fraction is 1 - rho

  double keep_fraction(std::size_t epoch) const;  // epoch is 0-based
};

struct PeerTrainResult {
  PeerModels models;
  std::vector<EpochMetrics> history;  // test metrics are those of model A
};

PeerTrainResult train_co_teaching(const LabeledDataset& data, const TrainConfig& config,
                                  const CoTeachSchedule& schedule, const LabeledDataset* test = nullptr);

// True where the two models' predicted classes differ. Sees predictions only.
std::vector<bool> disagreement_mask(std::span<const Label> predictions_a,
                                    std::span<const Label> predictions_b);

// Returns the number of samples both models were updated on.
std::size_t disagreement_step(PeerModels& models, const LabeledDataset& data,
                              std::span<const std::size_t> batch, const LossSpec& loss,
                              double learning_rate);

PeerTrainResult train_disagreement(const LabeledDataset& data, const TrainConfig& config,
                                   const LabeledDataset* test = nullptr);

// ---------------------------------------------------------------------------
// Dual models with iterative label update

inline constexpr double kDualSmallScale = 0.80;
inline constexpr double kDualLargeScale = 1.25;

struct RelabelStats {
  std::size_t by_a = 0;
  std::size_t by_b = 0;
  std::size_t averaged = 0;
};

// One epoch: each model trains per sample on the stored label or the peer's predicted class,
// whichever gives it the lower loss. At the end, an entry is replaced by a model's predicted
// class when exactly one model finds its own prediction lower-loss than the stored label,
// and by the mean of both predicted distributions when both do.
RelabelStats dual_relabel_epoch(PeerModels& models, const LabeledDataset& data, SoftLabelStore& store,
                                const TrainConfig& config, std::size_t epoch);

struct DualRelabelResult {
  PeerModels models;
  SoftLabelStore store;
  std::vector<EpochMetrics> history;
  std::vector<RelabelStats> relabels;
  double initial_agreement = 0.0;  // only when the data carries truth
  double final_agreement = 0.0;
};

// Builds the 0.8x / 1.25x capacity pair, warms both up on the observed labels for
// `warmup_epochs`, then runs config.epochs relabel epochs. `truth`, when given, is used
// for agreement reporting only.
DualRelabelResult train_dual_relabel(const LabeledDataset& data, const TrainConfig& config,
                                     std::size_t warmup_epochs = 1,
                                     const Labels* truth = nullptr,
                                     const LabeledDataset* test = nullptr);

// ---------------------------------------------------------------------------
// Iterative label cleaning

inline constexpr std::size_t kMetaFeatureCount = 5;

struct CleaningMetaFeatures {
  double loss = 0.0;
  double max_prob = 0.0;
  double margin = 0.0;        // top1 - top2 probability
  double disagreement = 0.0;  // seed-ensemble disagreement
  double centroid_distance = 0.0;

  std::array<double, kMetaFeatureCount> as_array() const {
    return {loss, max_prob, margin, disagreement, centroid_distance};
  }
};

// `centroids` are K x d class means of the labels the features are scored against.
std::vector<CleaningMetaFeatures> meta_features(std::span<const ModelParams> ensemble,
                                                const Matrix& features, std::span<const Label> labels,
                                                const Matrix& centroids);
Matrix class_centroids(const Matrix& features, std::span<const Label> labels, int k);

// Logistic flip detector over standardised meta-features; a linear two-class model of the
// core trainer.
struct MetaClassifier {
  ModelParams model;
  std::array<double, kMetaFeatureCount> mean{};
  std::array<double, kMetaFeatureCount> scale{};

  double flip_probability(const CleaningMetaFeatures& f) const;
};

struct MetaTrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

MetaClassifier train_meta_classifier(std::span<const CleaningMetaFeatures> features,
                                     std::span<const int> targets, const MetaTrainOptions& options);

struct CleanOptions {
  std::size_t rounds = 3;
  double threshold = 0.5;
  std::size_t ensemble_size = 3;
  MetaTrainOptions meta;
};

struct CleanResult {
  SoftLabelStore store;
  std::vector<bool> flags;  // union over rounds, indices into the noisy set
  std::vector<std::size_t> flags_per_round;
  std::vector<std::size_t> changed_per_round;
  MetaClassifier meta;
  ModelParams final_model;  // trained on the cleaned labels
  std::vector<EpochMetrics> history;  // of the final model
};

// `noisy` is read through its observed labels only. `clean_small` must carry true labels:
// the meta-classifier target is [observed != true] on that set.
CleanResult iterative_clean(const LabeledDataset& noisy, const LabeledDataset& clean_small,
                            const TrainConfig& config, const CleanOptions& options = {},
                            const LabeledDataset* test = nullptr);

}  // namespace nlab
