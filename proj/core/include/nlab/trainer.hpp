#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/losses.hpp"
#include "nlab/model.hpp"

namespace nlab {

struct ArchSpec {
  ArchKind kind = ArchKind::linear;
  std::size_t hidden = kDefaultHidden;
  double capacity_scale = 1.0;

  Arch resolve(std::size_t dims, std::size_t classes) const {
    return Arch{kind, dims, classes, kind == ArchKind::mlp ? hidden : 0, capacity_scale};
  }
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  LossSpec loss = CrossEntropy{};
  ArchSpec arch;

  void validate() const;
};

void to_json(nlohmann::json& j, const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

// Seed streams carved out of TrainConfig::seed.
enum class SeedStream : std::uint64_t { init = 1, shuffle = 2, peer = 3, mixup = 4, ensemble = 5 };
std::uint64_t stream_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index = 0) noexcept;

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::size_t updated = 0;  // samples that contributed a gradient
  std::size_t skipped = 0;  // samples visited but given weight 0
  std::optional<double> test_accuracy;
  std::optional<double> test_macro_f1;
};

// Per-sample gradient multiplier: 1 trains normally, 0 skips, negative ascends.
using SampleWeightFn = std::function<double(double loss, std::span<const double> probs, Label observed)>;

struct EpochContext {
  std::size_t epoch;
  const ModelParams& params;
  const LabeledDataset& data;
  std::span<const double> losses;  // per sample, under the configured loss
  const Matrix& probs;             // per sample softmax outputs
};
// Picks the samples to train on for one epoch. Indices refer to the training set.
using EpochSelectFn = std::function<std::vector<std::size_t>(const EpochContext&)>;

struct TrainHooks {
  SampleWeightFn sample_weight;
  EpochSelectFn select;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;
};

// Accumulates per-sample gradients for one mini-batch.
class GradientBuffer {
 public:
  explicit GradientBuffer(const ModelParams& like) : grad_(zeros_like(like)) {}

  void add(const ModelParams& p, std::span<const double> x, const ForwardCache& cache,
           std::span<const double> grad_logits, double weight) {
    backward_accumulate(p, x, cache, grad_logits, weight, grad_);
  }
  void add_noise_layer(const Matrix& grad_q, double weight);

  // p -= lr * grad / count, then clears the buffer.
  void apply(ModelParams& p, double learning_rate, std::size_t count);
  ModelParams& grad() noexcept { return grad_; }

 private:
  ModelParams grad_;
};

// Mini-batch SGD on `data.labels`, continuing from `params`. Only data.labels is read for
// targets. When `test` is given, test accuracy is scored against its true labels.
// Throws diverged when a batch produces non-finite loss or logits.
std::vector<EpochMetrics> fit(ModelParams& params, const LabeledDataset& data,
                              const TrainConfig& config, const TrainHooks& hooks = {},
                              const LabeledDataset* test = nullptr);

TrainResult train(const LabeledDataset& data, const TrainConfig& config, const TrainHooks& hooks = {},
                  const LabeledDataset* test = nullptr);

// Scores params on the dataset's true labels (observed labels when truth is absent).
double evaluate_accuracy(const ModelParams& params, const LabeledDataset& data);

}  // namespace nlab
