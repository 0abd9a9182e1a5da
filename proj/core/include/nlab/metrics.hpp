#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nlab/dataset.hpp"
#include "nlab/matrix.hpp"

namespace nlab {

inline constexpr std::size_t kEceBins = 15;

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_accuracy;
  double ece = 0.0;
  std::optional<double> auc;  // K == 2 only, class 1 as positive
};

// Predictions are argmax of each probability row, confidence is its max.
Metrics metrics(const Matrix& probs, std::span<const Label> truth);
Metrics metrics(std::span<const Label> predictions, std::span<const double> confidences,
                std::span<const Label> truth, int k);

double accuracy(std::span<const Label> predictions, std::span<const Label> truth);
// Unweighted mean of per-class F1 over all K classes; classes absent from truth score 0.
double macro_f1(std::span<const Label> predictions, std::span<const Label> truth, int k);
double expected_calibration_error(std::span<const double> confidences, const std::vector<bool>& correct,
                                  std::size_t bins = kEceBins);
// Mann-Whitney estimate; ties count one half.
double binary_auc(std::span<const double> positive_scores, std::span<const Label> truth);

struct FlagQuality {
  std::size_t flagged = 0;
  std::size_t actual = 0;
  std::size_t true_positive = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Precision is 1 when nothing is flagged; recall is 1 when nothing should be.
FlagQuality flag_quality(const std::vector<bool>& flagged, const std::vector<bool>& actual);
std::vector<bool> flip_indicators(const LabeledDataset& ds);

}  // namespace nlab
