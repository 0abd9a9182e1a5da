// nlab command-line tool: data generation, corruption, training, fusion, cleaning, sweeps.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nlab/annotators.hpp"
#include "nlab/dataset.hpp"
#include "nlab/errors.hpp"
#include "nlab/experiment.hpp"
#include "nlab/io.hpp"
#include "nlab/metrics.hpp"
#include "nlab/noise.hpp"
#include "nlab/procedures.hpp"
#include "nlab/sweep.hpp"

namespace {

using nlohmann::json;
using nlab::ErrorKind;

// key=value arguments of options such as --blobs.
class KeyValues {
 public:
  KeyValues(const std::vector<std::string>& args, const std::string& option,
            std::initializer_list<const char*> allowed)
      : option_(option) {
    for (const auto& a : args) {
      const auto eq = a.find('=');
      if (eq == std::string::npos || eq == 0)
        nlab::fail(ErrorKind::invalid_parameter, option + ": expected key=value, got '" + a + "'");
      const std::string key = a.substr(0, eq);
      bool ok = false;
      for (const char* k : allowed) ok = ok || key == k;
      if (!ok) nlab::fail(ErrorKind::invalid_parameter, option + ": unknown key '" + key + "'");
      values_[key] = a.substr(eq + 1);
    }
  }

  double real(const char* key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0.0;
    const auto* end = it->second.data() + it->second.size();
    const auto [ptr, ec] = std::from_chars(it->second.data(), end, v);
    if (ec != std::errc() || ptr != end)
      nlab::fail(ErrorKind::invalid_parameter, option_ + ": '" + key + "' is not a number");
    return v;
  }

  template <typename T>
  T integer(const char* key, T fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    T v{};
    const auto* end = it->second.data() + it->second.size();
    const auto [ptr, ec] = std::from_chars(it->second.data(), end, v);
    if (ec != std::errc() || ptr != end)
      nlab::fail(ErrorKind::invalid_parameter, option_ + ": '" + key + "' is not an integer");
    return v;
  }

  std::vector<double> reals(const char* key) const {
    std::vector<double> out;
    const auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::size_t start = 0;
    const std::string& s = it->second;
    while (start <= s.size()) {
      const auto comma = std::min(s.find(',', start), s.size());
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data() + start, s.data() + comma, v);
      if (ec != std::errc() || ptr != s.data() + comma)
        nlab::fail(ErrorKind::invalid_parameter, option_ + ": '" + key + "' must be a comma list of numbers");
      out.push_back(v);
      start = comma + 1;
    }
    return out;
  }

  bool has(const char* key) const { return values_.contains(key); }

 private:
  std::string option_;
  std::map<std::string, std::string> values_;
};

json load_json(const std::string& path) {
  json j = json::parse(nlab::read_file(path), nullptr, false);
  if (j.is_discarded()) nlab::fail(ErrorKind::config_validation, path + " is not valid JSON");
  return j;
}

std::filesystem::path sibling(const std::filesystem::path& p, const char* extension) {
  std::filesystem::path out = p;
  out.replace_extension(extension);
  return out;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::optional<std::vector<std::string>> blobs, rings;
  std::string out, config;
  std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& a) {
  nlab::LabeledDataset ds;
  json cfg = a.config.empty() ? json::object() : load_json(a.config);
  if (a.blobs || cfg.value("generator", "") == "blobs") {
    const KeyValues kv(a.blobs.value_or(std::vector<std::string>{}), "--blobs", {"k", "n", "d", "sep", "seed"});
    nlab::BlobsParams p;
    p.num_classes = kv.integer<int>("k", cfg.value("num_classes", p.num_classes));
    p.n_per_class = kv.integer<std::size_t>("n", cfg.value("n_per_class", p.n_per_class));
    p.dims = kv.integer<std::size_t>("d", cfg.value("dims", p.dims));
    p.separation = kv.real("sep", cfg.value("separation", p.separation));
    p.seed = a.seed.value_or(kv.integer<std::uint64_t>("seed", cfg.value("seed", p.seed)));
    ds = nlab::gen_blobs(p);
  } else if (a.rings || cfg.value("generator", "") == "rings") {
    const KeyValues kv(a.rings.value_or(std::vector<std::string>{}), "--rings", {"k", "n", "noise", "seed"});
    nlab::RingsParams p;
    p.num_classes = kv.integer<int>("k", cfg.value("num_classes", p.num_classes));
    p.n_per_class = kv.integer<std::size_t>("n", cfg.value("n_per_class", p.n_per_class));
    p.noise_std = kv.real("noise", cfg.value("noise_std", p.noise_std));
    p.seed = a.seed.value_or(kv.integer<std::uint64_t>("seed", cfg.value("seed", p.seed)));
    ds = nlab::gen_rings(p);
  } else {
    nlab::fail(ErrorKind::invalid_parameter, "gen: choose --blobs or --rings");
  }
  nlab::save_csv(ds, a.out);
  std::cout << "wrote " << ds.size() << " samples to " << a.out << '\n';
  return 0;
}

struct NoiseArgs {
  std::string in, out, config, matrix;
  std::optional<std::vector<std::string>> symmetric, feature, annotators;
  std::optional<std::uint64_t> seed;
};

int cmd_noise(const NoiseArgs& a) {
  const nlab::LabeledDataset ds = nlab::load_csv(a.in);
  json cfg = a.config.empty() ? json::object() : load_json(a.config);
  const std::string kind = a.symmetric    ? "symmetric"
                           : a.feature    ? "feature_dependent"
                           : a.annotators ? "annotators"
                           : !a.matrix.empty() ? "matrix"
                                               : cfg.value("kind", std::string());
  std::uint64_t seed = a.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  nlab::LabeledDataset out;
  if (kind == "annotators") {
    const KeyValues kv(a.annotators.value_or(std::vector<std::string>{}), "--annotators", {"rhos", "seed"});
    std::vector<double> rhos = kv.has("rhos") ? kv.reals("rhos") : cfg.value("rhos", std::vector<double>{});
    if (rhos.empty()) nlab::fail(ErrorKind::invalid_parameter, "noise: --annotators needs rhos=r1,r2,...");
    if (!a.seed) seed = kv.integer<std::uint64_t>("seed", seed);
    std::vector<nlab::TransitionMatrix> confusions;
    for (double r : rhos) confusions.push_back(nlab::symmetric_transition(ds.num_classes, r));
    nlab::Rng rng(seed);
    out = nlab::simulate_annotators(ds, confusions, rng);
    if (!out.true_labels) out.true_labels = ds.labels;
  } else {
    nlab::NoiseSpec spec;
    if (kind == "symmetric") {
      const KeyValues kv(a.symmetric.value_or(std::vector<std::string>{}), "--symmetric", {"rho", "seed"});
      spec.kind = nlab::SymmetricNoise{kv.real("rho", cfg.value("rho", 0.0))};
      if (!a.seed) seed = kv.integer<std::uint64_t>("seed", seed);
    } else if (kind == "feature_dependent") {
      const KeyValues kv(a.feature.value_or(std::vector<std::string>{}), "--feature", {"rho_max", "beta", "seed"});
      spec.kind = nlab::FeatureNoise{{kv.real("rho_max", cfg.value("rho_max", 0.3)),
                                      kv.real("beta", cfg.value("beta", 0.25))}};
      if (!a.seed) seed = kv.integer<std::uint64_t>("seed", seed);
    } else if (kind == "matrix") {
      const json t = a.matrix.empty() ? cfg.at("transition") : load_json(a.matrix);
      spec.kind = nlab::MatrixNoise{t.get<nlab::TransitionMatrix>()};
    } else {
      nlab::fail(ErrorKind::invalid_parameter,
                 "noise: choose one of --symmetric, --matrix, --feature, --annotators");
    }
    spec.seed = seed;
    out = nlab::apply_noise(ds, spec);
  }
  nlab::save_csv(out, a.out);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < out.size(); ++i) flipped += out.labels[i] != (*out.true_labels)[i] ? 1 : 0;
  std::cout << "wrote " << out.size() << " samples to " << a.out << " (" << flipped << " labels flipped)\n";
  return 0;
}

struct FuseArgs {
  std::string in, out, labels_out, method = "staple", config;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

int cmd_fuse(const FuseArgs& a) {
  const nlab::LabeledDataset ds = nlab::load_csv(a.in);
  if (!ds.annotator_labels) nlab::fail(ErrorKind::invalid_input, "fuse: " + a.in + " has no ann* columns");
  json cfg = a.config.empty() ? json::object() : load_json(a.config);
  const std::string method = cfg.value("method", a.method);
  json out{{"method", method}};
  nlab::Labels fused;
  if (method == "majority") {
    fused = nlab::majority_vote_all(*ds.annotator_labels);
    std::vector<nlab::TransitionMatrix> conf;
    for (std::size_t r = 0; r < ds.num_annotators(); ++r) {
      nlab::Labels column(ds.size());
      for (std::size_t i = 0; i < ds.size(); ++i) column[i] = (*ds.annotator_labels)[i][r];
      conf.push_back(nlab::estimate_transition(fused, column, ds.num_classes));
    }
    nlab::ProbVector prior(static_cast<std::size_t>(ds.num_classes), 0.0);
    for (nlab::Label y : fused) prior[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(fused.size());
    out["model"] = nlab::AnnotatorModel{std::move(conf), std::move(prior)};
  } else if (method == "staple") {
    nlab::StapleOptions o;
    o.max_iters = cfg.value("max_iters", a.max_iters);
    o.tol = cfg.value("tol", a.tol);
    nlab::StapleResult s = nlab::staple(*ds.annotator_labels, ds.num_classes, o);
    out["model"] = s.model;
    out["iterations"] = s.iterations;
    out["converged"] = s.converged;
    out["log_likelihood"] = s.log_likelihood;
    fused = std::move(s.fused);
  } else {
    nlab::fail(ErrorKind::invalid_parameter, "fuse: --method must be 'majority' or 'staple'");
  }
  const std::filesystem::path labels_path = a.labels_out.empty() ? sibling(a.out, ".labels.csv") : std::filesystem::path(a.labels_out);
  out["labels_csv"] = labels_path.string();
  if (ds.true_labels) out["fused_accuracy"] = nlab::accuracy(fused, *ds.true_labels);
  nlab::save_csv(nlab::with_labels(ds, fused), labels_path);
  nlab::write_file_atomic(a.out, out.dump(2) + "\n");
  std::cout << "fused " << ds.size() << " samples from " << ds.num_annotators() << " annotators -> " << a.out
            << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  nlab::ExperimentConfig cfg = nlab::ExperimentConfig::load(a.config, a.seed);
  if (!a.out.empty()) cfg.output = a.out;
  if (!cfg.output) cfg.output = sibling(a.config, ".report.json");
  const nlab::ExperimentReport r = nlab::run_experiment(cfg);
  std::cout << r.pipeline << ": accuracy " << nlab::format_double(r.final_metrics.accuracy) << ", macro_f1 "
            << nlab::format_double(r.final_metrics.macro_f1) << " -> " << cfg.output->string() << '\n';
  return 0;
}

struct CleanArgs {
  std::string in, clean, out, config, cleaned_out;
  double trusted_fraction = 0.1;
  std::optional<std::uint64_t> seed;
};

int cmd_clean(const CleanArgs& a) {
  const nlab::LabeledDataset all = nlab::load_csv(a.in);
  json cfg = a.config.empty() ? json::object() : load_json(a.config);
  const std::uint64_t seed = a.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  nlab::LabeledDataset noisy, trusted;
  if (!a.clean.empty()) {
    noisy = all;
    trusted = nlab::load_csv(a.clean);
    if (!trusted.true_labels)
      nlab::fail(ErrorKind::invalid_input, "clean: " + a.clean + " needs a 'true' column");
  } else {
    if (!all.true_labels)
      nlab::fail(ErrorKind::invalid_input, "clean: without --clean, " + a.in + " needs a 'true' column");
    const nlab::SplitIndices idx = nlab::split_indices(all, a.trusted_fraction, nlab::derive_seed(seed, 5));
    trusted = all.subset(idx.test);
    noisy = all.subset(idx.train);
  }
  nlab::TrainConfig tc;
  if (cfg.contains("train")) {
    const json& t = cfg.at("train");
    tc.epochs = t.value("epochs", tc.epochs);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.learning_rate = t.value("learning_rate", tc.learning_rate);
    if (t.contains("arch")) tc.arch = nlab::arch_from_json(t.at("arch"));
  }
  tc.seed = nlab::derive_seed(seed, 4);
  nlab::CleanOptions o;
  o.rounds = cfg.value("rounds", o.rounds);
  o.threshold = cfg.value("threshold", o.threshold);
  o.ensemble_size = cfg.value("ensemble_size", o.ensemble_size);
  const nlab::CleanResult r = nlab::iterative_clean(noisy.training_view(), trusted, tc, o);

  json out{{"store", r.store}, {"flags_per_round", r.flags_per_round}, {"changed_per_round", r.changed_per_round}};
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < r.flags.size(); ++i)
    if (r.flags[i]) flagged.push_back(i);
  out["flagged"] = flagged;
  if (noisy.true_labels) {
    const nlab::FlagQuality q = nlab::flag_quality(r.flags, nlab::flip_indicators(noisy));
    out["precision"] = q.precision;
    out["recall"] = q.recall;
  }
  nlab::write_file_atomic(a.out, out.dump(2) + "\n");
  if (!a.cleaned_out.empty()) nlab::save_csv(nlab::with_labels(noisy, r.store.hard_labels()), a.cleaned_out);
  std::cout << "flagged " << flagged.size() << " of " << noisy.size() << " samples -> " << a.out << '\n';
  return 0;
}

struct SweepArgs {
  std::string config, out;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a) {
  json j = load_json(a.config);
  if (a.seed && j.contains("template") && j.at("template").is_object()) j["template"]["seed"] = *a.seed;
  if (a.workers) j["workers"] = *a.workers;
  if (!a.out.empty()) j["output"] = a.out;
  if (!j.contains("output")) j["output"] = sibling(a.config, "").string() + "_sweep";
  const nlab::SweepResult r = nlab::run_sweep(nlab::SweepSpec::from_json(j));
  std::size_t failed = 0;
  for (const auto& row : r.rows) failed += row.ok ? 0 : 1;
  std::cout << r.rows.size() << " runs (" << failed << " failed)";
  if (r.fit) std::cout << ", quadratic fit R^2 for " << r.baseline << ": " << nlab::format_double(r.fit->r2);
  std::cout << " -> " << j.at("output").get<std::string>() << '\n';
  return 0;
}

struct ReportArgs {
  std::string in;
  bool epochs = false;
};

int cmd_report(const ReportArgs& a) {
  const json r = load_json(a.in);
  if (!r.contains("schema_version"))
    nlab::fail(ErrorKind::invalid_input, "report: " + a.in + " has no schema_version");
  if (r.contains("rows")) {  // sweep summary
    std::printf("%-5s %-6s %-28s %-8s %s\n", "run", "rho", "method", "status", "test_error");
    for (const auto& row : r.at("rows"))
      std::printf("%-5zu %-6.3g %-28s %-8s %s\n", row.at("run").get<std::size_t>(), row.at("rho").get<double>(),
                  row.at("method").get<std::string>().c_str(), row.at("status").get<std::string>().c_str(),
                  row.contains("test_error") ? nlab::format_double(row.at("test_error").get<double>()).c_str() : "-");
    if (!r.at("quadratic_fit").is_null())
      std::printf("quadratic fit R^2 (%s): %.4f\n", r.at("baseline").get<std::string>().c_str(),
                  r.at("quadratic_fit").at("r2").get<double>());
    return 0;
  }
  const json& f = r.at("final");
  std::printf("pipeline    %s\n", r.at("pipeline").get<std::string>().c_str());
  std::printf("accuracy    %.4f\n", f.at("accuracy").get<double>());
  std::printf("macro_f1    %.4f\n", f.at("macro_f1").get<double>());
  std::printf("ece         %.4f\n", f.at("ece").get<double>());
  if (f.contains("auc")) std::printf("auc         %.4f\n", f.at("auc").get<double>());
  std::printf("noise rate  %.4f\n", r.at("diagnostics").at("noise").at("realized_rate").get<double>());
  if (a.epochs) {
    std::printf("\n%-6s %-12s %s\n", "epoch", "train_loss", "test_acc");
    for (const auto& e : r.at("epochs"))
      std::printf("%-6zu %-12.6f %s\n", e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                  e.at("test_accuracy").is_null() ? "-"
                                                  : nlab::format_double(e.at("test_accuracy").get<double>()).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlab: supervised learning under label noise"};
  app.set_version_flag("--version", nlab::version());
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset as CSV");
  g->add_option("--blobs", gen.blobs, "Gaussian blobs: k= n= d= sep= seed=")->expected(0, -1);
  g->add_option("--rings", gen.rings, "Concentric rings: k= n= noise= seed=")->expected(0, -1);
  g->add_option("--out", gen.out, "Output CSV")->required();
  g->add_option("--config", gen.config, "JSON with generator parameters");
  g->add_option("--seed", gen.seed, "Overrides the seed");

  NoiseArgs noise;
  auto* n = app.add_subcommand("noise", "Corrupt the labels of a CSV dataset");
  n->add_option("--in", noise.in, "Input CSV")->required();
  n->add_option("--out", noise.out, "Output CSV")->required();
  n->add_option("--symmetric", noise.symmetric, "rho= seed=")->expected(0, -1);
  n->add_option("--matrix", noise.matrix, "Transition matrix JSON {\"k\":..,\"rows\":..}");
  n->add_option("--feature", noise.feature, "Feature-dependent: rho_max= beta= seed=")->expected(0, -1);
  n->add_option("--annotators", noise.annotators, "Simulated annotators: rhos=r1,r2,.. seed=")->expected(0, -1);
  n->add_option("--config", noise.config, "JSON noise spec");
  n->add_option("--seed", noise.seed, "Overrides the seed");

  FuseArgs fuse;
  auto* f = app.add_subcommand("fuse", "Fuse multi-annotator labels");
  f->add_option("--in", fuse.in, "CSV with ann0.. columns")->required();
  f->add_option("--out", fuse.out, "Annotator model JSON")->required();
  f->add_option("--method", fuse.method, "majority | staple")->check(CLI::IsMember({"majority", "staple"}));
  f->add_option("--labels-out", fuse.labels_out, "Fused labels CSV (default <out>.labels.csv)");
  f->add_option("--max-iters", fuse.max_iters, "EM iteration cap");
  f->add_option("--tol", fuse.tol, "EM convergence tolerance");
  f->add_option("--config", fuse.config, "JSON with method options");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run one experiment from a JSON config");
  t->add_option("--config", train.config, "Experiment JSON")->required();
  t->add_option("--out", train.out, "Report JSON (default from config)");
  t->add_option("--seed", train.seed, "Overrides the config seed");

  CleanArgs clean;
  auto* c = app.add_subcommand("clean", "Iterative label cleaning with a meta-classifier");
  c->add_option("--in", clean.in, "Noisy CSV")->required();
  c->add_option("--out", clean.out, "Label store JSON")->required();
  c->add_option("--clean", clean.clean, "Trusted CSV with a 'true' column");
  c->add_option("--trusted-fraction", clean.trusted_fraction, "Trusted split carved from --in");
  c->add_option("--cleaned-out", clean.cleaned_out, "CSV with the cleaned labels");
  c->add_option("--config", clean.config, "JSON with train/rounds/threshold options");
  c->add_option("--seed", clean.seed, "Overrides the seed");

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "Run a grid of experiments over noise rates and methods");
  s->add_option("--config", sweep.config, "Sweep JSON")->required();
  s->add_option("--out", sweep.out, "Output directory");
  s->add_option("--workers", sweep.workers, "Worker threads");
  s->add_option("--seed", sweep.seed, "Overrides the template seed");

  ReportArgs report;
  auto* r = app.add_subcommand("report", "Summarise a report or sweep summary JSON");
  r->add_option("--in", report.in, "Report JSON")->required();
  r->add_flag("--epochs", report.epochs, "Also print the per-epoch table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* cmd : app.get_subcommands()) sub = cmd;
    std::cerr << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (n->parsed()) return cmd_noise(noise);
    if (f->parsed()) return cmd_fuse(fuse);
    if (t->parsed()) return cmd_train(train);
    if (c->parsed()) return cmd_clean(clean);
    if (s->parsed()) return cmd_sweep(sweep);
    if (r->parsed()) return cmd_report(report);
  } catch (const nlab::Error& e) {
    std::cerr << "error (" << nlab::to_string(e.kind()) << "): " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
