#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlab/experiment.hpp"

namespace nlab {

struct SweepMethod {
  std::string name;
  nlohmann::json method;  // the "method" object of an experiment config
};

// Every (rho, method) pair becomes one run of `base` with symmetric noise at rho.
struct SweepSpec {
  nlohmann::json base;
  std::vector<double> rhos;
  std::vector<SweepMethod> methods;
  std::size_t workers = 1;
  std::optional<std::filesystem::path> output;  // directory for per-run reports and the summary

  // {"template": {...}, "rhos": [...], "methods": [{"name": .., "method": {..}}], "workers": n}
  static SweepSpec from_json(const nlohmann::json& j);
  void validate() const;
};

struct SweepRow {
  std::size_t run = 0;
  double rho = 0.0;
  std::string method;
  bool ok = false;
  std::string error;
  Metrics metrics;
};

struct QuadraticFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;  // error ~ c0 + c1 rho + c2 rho^2
  double r2 = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;                   // in grid order, rho-major
  std::vector<std::optional<ExperimentReport>> reports;
  std::string baseline;                         // method the fit is computed for
  std::optional<QuadraticFit> fit;

  std::string summary_csv() const;
  nlohmann::json summary_json() const;
};

// Least squares fit of y on (1, x, x^2). Empty when fewer than three distinct x values.
std::optional<QuadraticFit> quadratic_fit(const std::vector<double>& x, const std::vector<double>& y);

// Runs the grid on a pool of spec.workers threads. A failing run is recorded in its row
// and does not stop the others. Writes run_<i>.json, summary.csv and summary.json under
// spec.output when set.
SweepResult run_sweep(const SweepSpec& spec);

}  // namespace nlab
