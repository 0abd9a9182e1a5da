#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/matrix.hpp"
#include "nlab/model.hpp"
#include "nlab/noise.hpp"
#include "nlab/numerics.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

// Per-annotator confusion theta^(a)[c][j] = p(annotator a says j | true c), and a class prior.
struct AnnotatorModel {
  std::vector<TransitionMatrix> confusions;
  ProbVector prior;
};

void to_json(nlohmann::json& j, const AnnotatorModel& m);
void from_json(const nlohmann::json& j, AnnotatorModel& m);

// Most frequent label; ties go to the lowest class index.
Label majority_vote(std::span<const Label> labels);
Labels majority_vote_all(const std::vector<Labels>& annotator_labels);

struct StapleOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  double init_diag = 0.8;
  double smoothing = 1e-9;
};

struct StapleResult {
  Matrix posteriors;  // N x K
  AnnotatorModel model;
  Labels fused;
  // Objective after each E-step: data log-likelihood plus the smoothing prior
  // (smoothing * sum log theta + smoothing * sum log pi). EM never decreases it.
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
  bool converged = false;
};

// Discrete multi-class STAPLE (EM over annotator confusions and the class prior).
StapleResult staple(const std::vector<Labels>& annotator_labels, int k, const StapleOptions& options = {});

struct MinLossChoice {
  std::size_t annotator = 0;
  Label label = 0;
};

// Argmin of the per-annotator losses, ties to the lowest annotator index.
MinLossChoice min_loss_label(std::span<const double> losses, std::span<const Label> labels);

// Trains on, for every sample and step, the annotator label with the smallest current CE.
TrainResult train_min_loss(const LabeledDataset& data, const TrainConfig& config,
                           const LabeledDataset* test = nullptr);

struct ConfusionTrainOptions {
  double lambda_trace = 0.01;
  double init_diag = 0.9;
};

struct ConfusionTrainResult {
  ModelParams params;
  AnnotatorModel model;
  std::vector<EpochMetrics> history;
  double initial_trace_penalty = 0.0;
};

// Joint SGD on the classifier and one row-softmax confusion per annotator. Per sample the
// loss is sum_a CE((theta^(a))^T p(x), label_ia), plus lambda * sum_a trace(theta^(a)).
ConfusionTrainResult train_with_confusion(const LabeledDataset& data, const TrainConfig& config,
                                          const ConfusionTrainOptions& options = {},
                                          const LabeledDataset* test = nullptr);

// Replaces observed labels with `labels`; keeps everything else.
LabeledDataset with_labels(const LabeledDataset& data, Labels labels);

}  // namespace nlab
