#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nlab/dataset.hpp"
#include "nlab/losses.hpp"
#include "nlab/noise.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

struct RunningFilterParams {
  std::size_t window = 100;
  double multiplier = 1.5;
  std::size_t warmup = 30;
  double sigma_floor = 1e-12;
  // Whether losses of skipped samples enter the window.
  bool include_skipped = true;
};

enum class FilterDecision { update, skip };

// Skips a sample when its loss exceeds mean + multiplier * sigma of the recent window.
class RunningLossFilter {
 public:
  explicit RunningLossFilter(RunningFilterParams params = {});

  // Statistics are taken over the window before `loss` is appended.
  FilterDecision observe(double loss);

  std::size_t size() const noexcept { return count_; }
  double mean() const noexcept;
  // Population standard deviation of the window.
  double stddev() const noexcept;
  const RunningFilterParams& params() const noexcept { return params_; }

 private:
  void push(double loss);

  RunningFilterParams params_;
  std::vector<double> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

// Removes floor(fraction * n) lowest-confidence samples per observed class (or globally).
// Ties remove the lower index first. Returns kept indices in ascending order.
std::vector<std::size_t> rank_prune(std::span<const double> observed_confidence,
                                    std::span<const Label> labels, double prune_fraction,
                                    bool per_class = true);

// Removes the ceil(fraction * N) largest losses; ties remove the higher index first.
std::vector<std::size_t> trimmed_filter(std::span<const double> losses, double trim_fraction);

// Returns -gamma when 1^T T^-1 l(p) < 0 (the sample looks mislabelled), else +1.
double pumpout(const BackwardCorrected& correction, std::span<const double> probs, Label observed,
               double gamma);
double pumpout(const TransitionMatrix& t, BaseLoss base, std::span<const double> probs,
               Label observed, double gamma);

struct RunningFilterSpec {
  RunningFilterParams params;
};
struct RankPruneSpec {
  double fraction = 0.3;
  bool per_class = true;
  std::size_t warmup_epochs = 5;
};
struct TrimmedSpec {
  double fraction = 0.3;
  std::size_t warmup_epochs = 5;
};
struct PumpoutSpec {
  double gamma = 0.1;
  BaseLoss base = BaseLoss::ce;
  std::optional<TransitionMatrix> transition;  // resolved by the caller when absent
};

using ReweightSpec = std::variant<RunningFilterSpec, RankPruneSpec, TrimmedSpec, PumpoutSpec>;

void to_json(nlohmann::json& j, const ReweightSpec& spec);
ReweightSpec reweight_from_json(const nlohmann::json& j);
void validate(const ReweightSpec& spec);

// Trainer hooks realising a spec. Running-filter state lives inside the returned hooks.
TrainHooks make_hooks(const ReweightSpec& spec);

}  // namespace nlab
