#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "nlab/experiment.hpp"
#include "nlab/metrics.hpp"
#include "nlab/sweep.hpp"

using namespace nlab;
using nlab::test::error_kind;
using nlab::test::error_message;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return {{"seed", 7},
          {"dataset", {{"generator", "blobs"}, {"num_classes", 2}, {"n_per_class", 40}, {"dims", 2}, {"separation", 8}}},
          {"noise", {{"kind", "symmetric"}, {"rho", 0.2}}},
          {"train", {{"epochs", 3}, {"batch_size", 16}, {"learning_rate", 0.1}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("nlab_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("metrics: constant predictor on a balanced binary set") {
  const Labels truth{0, 0, 1, 1};
  const Labels pred{0, 0, 0, 0};
  const std::vector<double> conf(4, 1.0);
  const auto m = metrics(pred, conf, truth, 2);
  CHECK(m.accuracy == 0.5);
  CHECK(m.macro_f1 == doctest::Approx(1.0 / 3));
  CHECK(m.per_class_accuracy == std::vector<double>{1.0, 0.0});
  CHECK(m.ece == doctest::Approx(0.5));
}

TEST_CASE("metrics from probabilities") {
  Matrix p(4, 2);
  const double rows[4][2] = {{0.9, 0.1}, {0.4, 0.6}, {0.2, 0.8}, {0.7, 0.3}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) p(i, c) = rows[i][c];
  const auto m = metrics(p, Labels{0, 0, 1, 1});
  CHECK(m.accuracy == 0.5);
  REQUIRE(m.auc.has_value());
  // Positives score 0.8 and 0.3, negatives 0.1 and 0.6: three of four pairs ordered.
  CHECK(*m.auc == doctest::Approx(0.75));
  Matrix p3(1, 3);
  p3(0, 0) = 1.0;
  CHECK_FALSE(metrics(p3, Labels{0}).auc.has_value());
}

TEST_CASE("binary_auc ties and extremes") {
  CHECK(binary_auc(std::vector<double>{0.1, 0.9}, Labels{0, 1}) == 1.0);
  CHECK(binary_auc(std::vector<double>{0.9, 0.1}, Labels{0, 1}) == 0.0);
  CHECK(binary_auc(std::vector<double>{0.5, 0.5}, Labels{0, 1}) == 0.5);
}

TEST_CASE("expected calibration error") {
  CHECK(expected_calibration_error(std::vector<double>{1.0, 1.0}, {true, true}) == 0.0);
  CHECK(expected_calibration_error(std::vector<double>{0.75, 0.75, 0.75, 0.75}, {true, true, true, false}) ==
        doctest::Approx(0.0));
  CHECK(expected_calibration_error(std::vector<double>{0.95, 0.55}, {false, true}) ==
        doctest::Approx(0.5 * 0.95 + 0.5 * 0.45));
}

TEST_CASE("property: macro F1 lies in [0, 1] and equals 1 only for perfect predictions") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(40);
    Labels t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<Label>(rng.below(static_cast<std::uint64_t>(k)));
      p[i] = rng.uniform() < 0.6 ? t[i] : static_cast<Label>(rng.below(static_cast<std::uint64_t>(k)));
    }
    const double f = macro_f1(p, t, k);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(accuracy(t, t) == 1.0);
    if (p != t) CHECK(accuracy(p, t) < 1.0);
  }
}

TEST_CASE("flag quality") {
  const auto q = flag_quality({true, true, false, false}, {true, false, true, false});
  CHECK(q.precision == 0.5);
  CHECK(q.recall == 0.5);
  CHECK(q.f1 == 0.5);
  const auto none = flag_quality({false, false}, {false, false});
  CHECK(none.precision == 1.0);
  CHECK(none.recall == 1.0);
  CHECK(error_kind([] { flag_quality({true}, {true, false}); }) == ErrorKind::invalid_input);
}

TEST_CASE("prepare hides true labels from the method") {
  const auto cfg = ExperimentConfig::from_json(small_config());
  const auto d = prepare(cfg);
  CHECK_FALSE(d.train.true_labels.has_value());
  CHECK(d.test.true_labels.has_value());
  CHECK(d.train_truth.size() == d.train.size());
  CHECK(d.train.size() + d.test.size() == 80);
  CHECK_FALSE(d.trusted.has_value());
  REQUIRE(d.true_transition.has_value());
  CHECK((*d.true_transition)(0, 1) == doctest::Approx(0.2));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) flips += d.train.labels[i] != d.train_truth[i] ? 1 : 0;
  CHECK(d.realized_noise_rate == doctest::Approx(static_cast<double>(flips) / d.train.size()));
}

TEST_CASE("prepare carves a trusted split when the method estimates a transition") {
  auto j = small_config();
  j["method"] = {{"loss", {{"kind", "forward"}, {"transition", "estimate"}}}, {"trusted_fraction", 0.25}};
  const auto d = prepare(ExperimentConfig::from_json(j));
  REQUIRE(d.trusted.has_value());
  CHECK(d.trusted->true_labels.has_value());
  CHECK(d.trusted->size() + d.train.size() == 56);
}

TEST_CASE("config validation") {
  auto with = [](auto&& edit) {
    json j = small_config();
    edit(j);
    return error_kind([&] { ExperimentConfig::from_json(j); });
  };
  CHECK_FALSE(with([](json&) {}).has_value());
  CHECK(with([](json& j) { j.erase("seed"); }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["seed"] = -1; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["seed"] = 1.5; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["bogus"] = 1; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["train"]["epochs"] = 0; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["noise"]["rho"] = 1.0; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["method"] = {{"loss", {{"kind", "hinge"}}}}; }) == ErrorKind::config_validation);
  CHECK(with([](json& j) { j["dataset"]["dims"] = "two"; }) == ErrorKind::config_validation);

  json two = small_config();
  two["method"] = {{"loss", {{"kind", "backward"}, {"transition", "true"}}},
                   {"reweight", {{"kind", "trimmed"}, {"trim", 0.1}}}};
  const auto msg = error_message([&] { ExperimentConfig::from_json(two); });
  CHECK(msg.find("exactly one pipeline") != std::string::npos);
  CHECK(error_kind([&] { ExperimentConfig::from_json(two); }) == ErrorKind::config_validation);
  CHECK(Error(ErrorKind::config_validation, "x").is_validation());
}

TEST_CASE("pipeline names") {
  CHECK(ExperimentConfig::from_json(small_config()).pipeline() == "loss:ce");
  auto j = small_config();
  j["method"] = {{"loss", {{"kind", "mae"}}}};
  CHECK(ExperimentConfig::from_json(j).pipeline() == "loss:mae");
}

TEST_CASE("load applies a seed override and reports bad JSON") {
  const auto dir = scratch_dir("load");
  std::ofstream(dir / "c.json") << small_config().dump();
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(ExperimentConfig::load(dir / "c.json").seed == 7);
  CHECK(ExperimentConfig::load(dir / "c.json", 99).seed == 99);
  CHECK(error_kind([&] { ExperimentConfig::load(dir / "bad.json"); }) == ErrorKind::config_validation);
  CHECK(error_kind([&] { ExperimentConfig::load(dir / "missing.json"); }) == ErrorKind::io);
}

TEST_CASE("fixture experiment runs") {
  const auto cfg = ExperimentConfig::load(fs::path(NLAB_FIXTURES_DIR) / "experiment.json");
  const auto r = run_experiment(cfg);
  CHECK(r.pipeline == "loss:forward");
  CHECK(r.epochs.size() == 5);
  CHECK(r.final_metrics.accuracy > 0.8);
}

TEST_CASE("experiments are deterministic apart from wall time") {
  const auto cfg = ExperimentConfig::from_json(small_config());
  const auto a = run_experiment(cfg), b = run_experiment(cfg);
  CHECK(a.to_json(false).dump() == b.to_json(false).dump());
  CHECK(a.epochs_csv() == b.epochs_csv());
  auto other = small_config();
  other["seed"] = 8;
  CHECK(run_experiment(ExperimentConfig::from_json(other)).to_json(false) != a.to_json(false));
}

TEST_CASE("report layout") {
  const auto r = run_experiment(ExperimentConfig::from_json(small_config()));
  const auto j = r.to_json();
  CHECK(j.at("schema_version") == kReportSchemaVersion);
  CHECK(j.at("version") == version());
  CHECK(j.at("config") == small_config());
  CHECK(j.at("epochs").size() == 3);
  CHECK(j.at("epochs")[0].at("epoch") == 1);
  for (const char* key : {"accuracy", "macro_f1", "per_class_accuracy", "ece", "auc"})
    CHECK(j.at("final").contains(key));
  CHECK(j.at("diagnostics").at("noise").at("test_size") == 24);
  CHECK(j.contains("wall_time_seconds"));
  CHECK_FALSE(r.to_json(false).contains("wall_time_seconds"));

  const auto csv = r.epochs_csv();
  CHECK(csv.rfind("epoch,train_loss,test_accuracy,test_macro_f1,updated,skipped\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("run_experiment writes the report and its epochs CSV") {
  const auto dir = scratch_dir("write");
  auto j = small_config();
  j["output"] = (dir / "out" / "report.json").string();
  CHECK(epochs_csv_path(dir / "report.json") == dir / "report.epochs.csv");
  const auto r = run_experiment(ExperimentConfig::from_json(j));
  const auto back = json::parse(slurp(dir / "out" / "report.json"));
  CHECK(back.at("final").at("accuracy") == r.final_metrics.accuracy);
  CHECK(slurp(dir / "out" / "report.epochs.csv") == r.epochs_csv());
  for (const auto& e : fs::directory_iterator(dir / "out"))
    CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
}

TEST_CASE("stage errors carry the stage name") {
  auto j = small_config();
  j["dataset"] = {{"csv", "/nonexistent/data.csv"}};
  const auto cfg = ExperimentConfig::from_json(j);
  CHECK(error_kind([&] { run_experiment(cfg); }) == ErrorKind::io);
  CHECK(error_message([&] { run_experiment(cfg); }).rfind("dataset: ", 0) == 0); CHECK(error_message([&] { run_experiment(cfg); }).find("data.csv") != std::string::npos);
}

TEST_CASE("quadratic_fit recovers an exact parabola") {
  const std::vector<double> x{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> y;
  for (double v : x) y.push_back(0.05 + 0.2 * v + 1.5 * v * v);
  const auto f = quadratic_fit(x, y);
  REQUIRE(f.has_value());
  CHECK(f->c0 == doctest::Approx(0.05));
  CHECK(f->c1 == doctest::Approx(0.2));
  CHECK(f->c2 == doctest::Approx(1.5));
  CHECK(f->r2 == doctest::Approx(1.0));
  CHECK_FALSE(quadratic_fit({0.1, 0.1, 0.2}, {1, 2, 3}).has_value());
}

TEST_CASE("sweep grid validation") {
  const json empty{{"template", small_config()}, {"rhos", json::array()}, {"methods", json::array()}};
  CHECK(error_kind([&] { SweepSpec::from_json(empty); }) == ErrorKind::config_validation);
  const json bad_rho{{"template", small_config()}, {"rhos", {1.2}}};
  CHECK(error_kind([&] { SweepSpec::from_json(bad_rho); }) == ErrorKind::config_validation);
  const json bad_template{{"template", {{"seed", 1}}}, {"rhos", {0.1}}};
  CHECK(error_kind([&] { SweepSpec::from_json(bad_template); }) == ErrorKind::config_validation);
}

TEST_CASE("sweep produces one row per grid point in order") {
  const auto dir = scratch_dir("sweep");
  const json j{{"template", small_config()},
               {"rhos", {0.0, 0.2, 0.4}},
               {"methods", {{{"name", "ce"}, {"method", json::object()}},
                            {{"name", "mae"}, {"method", {{"loss", {{"kind", "mae"}}}}}}}},
               {"workers", 3},
               {"output", dir.string()}};
  const auto spec = SweepSpec::from_json(j);
  const auto r = run_sweep(spec);
  REQUIRE(r.rows.size() == 6);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].run == i);
    CHECK(r.rows[i].ok);
    CHECK(r.rows[i].rho == spec.rhos[i / 2]);
  }
  CHECK(r.fit.has_value());
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "run_005.json"));
  const auto csv = slurp(dir / "summary.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  auto serial = spec;
  serial.workers = 1;
  serial.output.reset();
  CHECK(run_sweep(serial).summary_csv() == r.summary_csv());
}

}  // TEST_SUITE
