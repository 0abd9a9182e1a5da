#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlab/dataset.hpp"
#include "nlab/metrics.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

inline constexpr int kReportSchemaVersion = 1;

// Version string compiled into the library.
const char* version() noexcept;

// Parsed and validated experiment description. `raw` is the JSON it came from and is
// echoed verbatim into the report.
struct ExperimentConfig {
  nlohmann::json raw;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output;

  // Validates the whole document; throws config_validation naming the offending field.
  static ExperimentConfig from_json(nlohmann::json j);
  static ExperimentConfig load(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override = std::nullopt);

  // The single method pipeline, e.g. "loss:ce", "reweight:trimmed", "procedure:clean".
  std::string pipeline() const;
  TrainConfig train_config() const;
};

// What the harness hands to the method: the training view has true labels stripped.
// `trusted` is a small split whose labels were verified; it is only carved out when the
// method asks for it (transition estimation or cleaning).
struct PreparedData {
  LabeledDataset train;    // training view
  LabeledDataset test;     // with true labels, scoring only
  Labels train_truth;      // kept by the harness for diagnostics
  std::optional<LabeledDataset> trusted;
  std::optional<TransitionMatrix> true_transition;
  std::vector<TransitionMatrix> true_annotator_confusions;
  double realized_noise_rate = 0.0;
};

PreparedData prepare(const ExperimentConfig& config);

struct ExperimentReport {
  nlohmann::json config;
  std::string pipeline;
  std::vector<EpochMetrics> epochs;
  Metrics final_metrics;
  nlohmann::json diagnostics = nlohmann::json::object();
  double wall_time_seconds = 0.0;

  // Deterministic fields only when include_wall_time is false.
  nlohmann::json to_json(bool include_wall_time = true) const;
  std::string epochs_csv() const;
};

// generate -> corrupt -> train with the method -> evaluate on true test labels. Errors
// are rethrown with the failing stage prefixed. Writes the report (and a sibling
// ".epochs.csv") when config.output is set.
ExperimentReport run_experiment(const ExperimentConfig& config);

void write_report(const ExperimentReport& report, const std::filesystem::path& path);
std::filesystem::path epochs_csv_path(const std::filesystem::path& report_path);

}  // namespace nlab
