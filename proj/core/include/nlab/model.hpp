#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/losses.hpp"
#include "nlab/matrix.hpp"
#include "nlab/numerics.hpp"

namespace nlab {

enum class ArchKind { linear, mlp };

inline constexpr std::size_t kDefaultHidden = 32;

struct Arch {
  ArchKind kind = ArchKind::linear;
  std::size_t dims = 0;
  std::size_t classes = 0;
  std::size_t hidden = kDefaultHidden;  // mlp only, before capacity scaling
  double capacity_scale = 1.0;

  static Arch linear(std::size_t d, std::size_t k) { return {ArchKind::linear, d, k, 0, 1.0}; }
  static Arch mlp(std::size_t d, std::size_t h, std::size_t k, double scale = 1.0) {
    return {ArchKind::mlp, d, k, h, scale};
  }

  // round(hidden * capacity_scale), at least 1.
  std::size_t hidden_units() const;
  void validate() const;

  friend bool operator==(const Arch&, const Arch&) = default;
};

// Linear: logits = x W1 + b1 with W1 d x K.
// MLP:    logits = relu(x W1 + b1) W2 + b2 with W1 d x h and W2 h x K.
// Biases are 1 x n matrices. noise_logits, when attached, is the K x K unconstrained
// parameterisation of a noise-adaptation layer (realised transition = row-softmax).
struct ModelParams {
  Arch arch;
  Matrix w1;
  Matrix b1;
  Matrix w2;
  Matrix b2;
  std::optional<Matrix> noise_logits;

  std::size_t num_classes() const noexcept { return arch.classes; }

  // Every parameter array in a fixed order: w1, b1, w2, b2, noise_logits.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

void to_json(nlohmann::json& j, const ModelParams& p);
void from_json(const nlohmann::json& j, ModelParams& p);

// Glorot-uniform weights, zero biases; deterministic per seed.
ModelParams init(const Arch& arch, std::uint64_t seed);
// Same shapes, all zero.
ModelParams zeros_like(const ModelParams& p);

struct ForwardCache {
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> logits;
};

std::vector<double> forward(const ModelParams& p, std::span<const double> x);
void forward(const ModelParams& p, std::span<const double> x, ForwardCache& cache);
ProbVector predict_proba(const ModelParams& p, std::span<const double> x);
Label predict(const ModelParams& p, std::span<const double> x);
std::vector<Label> predict_all(const ModelParams& p, const Matrix& features);
Matrix predict_proba_all(const ModelParams& p, const Matrix& features);

// grad += scale * d(logits . grad_logits)/d(params). The noise layer is left untouched.
void backward_accumulate(const ModelParams& p, std::span<const double> x, const ForwardCache& cache,
                         std::span<const double> grad_logits, double scale, ModelParams& grad);
ModelParams backward(const ModelParams& p, std::span<const double> x,
                     std::span<const double> grad_logits);

// p -= learning_rate * grad, over every tensor.
void sgd_update(ModelParams& p, const ModelParams& grad, double learning_rate);

// Max over parameters of |analytic - numeric| / max(1e-12, |analytic| + |numeric|),
// numeric by central differences of loss(softmax(forward(x)), y).
double grad_check(const ModelParams& p, std::span<const double> x, Label y, const LossSpec& loss,
                  double epsilon = 1e-6);

// ---------------------------------------------------------------------------
// Noise adaptation

Matrix row_softmax(const Matrix& logits);
// Logits whose row-softmax has `diag_prob` on the diagonal and the rest spread evenly.
Matrix identity_leaning_logits(std::size_t k, double diag_prob);

ModelParams attach_noise_layer(ModelParams p, double diag_prob = 0.9);
Matrix realized_transition(const ModelParams& p);
// (row-softmax(noise_logits))^T softmax(logits); the plain softmax when no layer is attached.
ProbVector noisy_forward(const ModelParams& p, std::span<const double> x);

// CE of A^T p against y, where A = row-softmax(Q) is passed already realised. Returns the
// gradients with respect to the classifier logits and to the unconstrained Q.
struct MixingEval {
  double value = 0.0;
  std::vector<double> grad_logits;
  Matrix grad_mix_logits;
};
MixingEval mixing_ce(const Matrix& mixing, std::span<const double> probs, Label y);

// 1 - fraction of models that vote for the ensemble-majority class (ties: lowest class).
double ensemble_disagreement(std::span<const ModelParams> models, std::span<const double> x);

}  // namespace nlab
