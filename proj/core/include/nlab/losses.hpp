#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/noise.hpp"
#include "nlab/numerics.hpp"

namespace nlab {

// Probabilities are clamped here before taking logs.
inline constexpr double kLogClamp = 1e-12;
// Backward correction refuses transitions with a larger 1-norm condition number.
inline constexpr double kMaxConditionNumber = 1e8;

enum class BaseLoss { ce, mae };

struct CrossEntropy {};
struct Mae {};
// Gradient-level reweighting of MAE; tau is the temperature of exp(tau * p_y).
struct Imae {
  double tau = 8.0;
};
// KL to the label smoothed as (1 - epsilon) e_y + epsilon / K.
struct SmoothKl {
  double epsilon = 0.1;
};
// [T^-1 l(p)]_y. Holds the inverse so it is computed once per run.
class BackwardCorrected {
 public:
  // Throws singular_matrix when cond_1(T) >= kMaxConditionNumber.
  BackwardCorrected(BaseLoss base, TransitionMatrix t);

  BaseLoss base() const noexcept { return base_; }
  const TransitionMatrix& transition() const noexcept { return t_; }
  const Matrix& inverse() const noexcept { return t_inv_; }

 private:
  BaseLoss base_;
  TransitionMatrix t_;
  Matrix t_inv_;
};
// CE of T^T p against the observed label.
struct ForwardCorrected {
  TransitionMatrix t;
};

using LossSpec = std::variant<CrossEntropy, Mae, Imae, SmoothKl, BackwardCorrected, ForwardCorrected>;

std::string loss_name(const LossSpec& spec);
void validate(const LossSpec& spec, int k);

void to_json(nlohmann::json& j, const LossSpec& spec);
LossSpec loss_from_json(const nlohmann::json& j);

struct LossEval {
  double value = 0.0;
  std::vector<double> grad_logits;
};

// Value and gradient with respect to the logits that produced `probs`.
LossEval evaluate(const LossSpec& spec, std::span<const double> probs, Label y);

double ce(std::span<const double> probs, Label y);
std::vector<double> ce_grad_logits(std::span<const double> probs, Label y);

// sum_j |e_y[j] - p[j]|, equal to 2 (1 - p_y).
double mae(std::span<const double> probs, Label y);
// -2 p_y (e_y - p); its l1 norm is 4 p_y (1 - p_y).
std::vector<double> mae_grad_logits(std::span<const double> probs, Label y);

// MAE direction rescaled to l1 norm exp(tau p_y) (1 - p_y), i.e. -1/2 exp(tau p_y) (e_y - p).
std::vector<double> imae_grad_logits(std::span<const double> probs, Label y, double tau);
// A primitive of the rule above: (Ei(tau) - Ei(tau p_y)) / 2, zero at p_y = 1.
// Used for reporting and finite-difference checks only.
double imae_value(std::span<const double> probs, Label y, double tau);

ProbVector smoothed_label(int k, Label y, double epsilon);
double smooth_kl(std::span<const double> probs, Label y, double epsilon);

// KL(target || probs) with 0 log 0 = 0; gradient w.r.t. logits is probs - target.
double kl_to_target(std::span<const double> probs, std::span<const double> target);
std::vector<double> kl_grad_logits(std::span<const double> probs, std::span<const double> target);

// Component j is the base loss evaluated as if the label were j.
std::vector<double> loss_vector(BaseLoss base, std::span<const double> probs);

double backward_corrected(const TransitionMatrix& t, std::span<const double> probs, Label observed,
                          BaseLoss base = BaseLoss::ce);
double backward_corrected(const BackwardCorrected& spec, std::span<const double> probs, Label observed);
std::vector<double> backward_corrected_grad_logits(const BackwardCorrected& spec,
                                                   std::span<const double> probs, Label observed);

// q = T^T p.
ProbVector forward_mix(const TransitionMatrix& t, std::span<const double> probs);
double forward_corrected(const TransitionMatrix& t, std::span<const double> probs, Label observed);
std::vector<double> forward_corrected_grad_logits(const TransitionMatrix& t,
                                                  std::span<const double> probs, Label observed);

}  // namespace nlab
