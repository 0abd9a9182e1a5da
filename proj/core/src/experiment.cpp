#include "nlab/experiment.hpp"

#include <chrono>
#include <set>
#include <sstream>

#include "nlab/annotators.hpp"
#include "nlab/io.hpp"
#include "nlab/noise.hpp"
#include "nlab/procedures.hpp"
#include "nlab/reweight.hpp"

#ifndef NLAB_VERSION
#define NLAB_VERSION "0.0.0"
#endif

namespace nlab {

const char* version() noexcept { return NLAB_VERSION; }

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& field, const std::string& msg) {
  fail(ErrorKind::config_validation, "config: " + field + ": " + msg);
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where, "must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) bad(where, "unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key, "has the wrong type");
  }
}

// "true" and "estimate" name where a transition matrix comes from; an object is literal.
enum class TransitionSource { literal, truth, estimate };

TransitionSource transition_source(const json& j, const char* key, const std::string& where,
                                   TransitionSource fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_object()) return TransitionSource::literal;
  if (v == "true") return TransitionSource::truth;
  if (v == "estimate") return TransitionSource::estimate;
  bad(where + "." + key, "must be \"true\", \"estimate\" or a transition object");
}

enum class Generator { blobs, rings, csv };
enum class Pipeline { loss, reweight, annotators, procedure, noise_layer };

struct Plan {
  std::uint64_t seed = 0;
  Generator generator = Generator::blobs;
  BlobsParams blobs;
  RingsParams rings;
  std::filesystem::path csv;
  double test_fraction = 0.3;

  json noise = json{{"kind", "none"}};
  std::uint64_t noise_seed = 0;

  json method = json::object();
  json loss = json{{"kind", "ce"}};
  Pipeline pipeline = Pipeline::loss;
  std::string pipeline_name;
  json pipeline_spec;
  double trusted_fraction = 0.1;
  bool needs_trusted = false;

  TrainConfig train;
};

bool is_correction(const json& loss) {
  const std::string kind = loss.value("kind", std::string());
  return kind == "backward" || kind == "forward";
}

bool needs_truth_transition(const Plan& p) {
  auto uses = [](const json& j, const char* key, TransitionSource dflt) {
    return transition_source(j, key, "", dflt) == TransitionSource::truth;
  };
  if (is_correction(p.loss) && uses(p.loss, "transition", TransitionSource::estimate)) return true;
  if (p.pipeline == Pipeline::reweight && p.pipeline_spec.value("kind", "") == "pumpout" &&
      uses(p.pipeline_spec, "transition", TransitionSource::estimate))
    return true;
  return p.pipeline == Pipeline::procedure && p.pipeline_spec.value("kind", "") == "co_teaching" &&
         p.pipeline_spec.contains("noise_rate") && p.pipeline_spec.at("noise_rate") == "true";
}

bool needs_estimate(const Plan& p) {
  auto uses = [](const json& j, const char* key) {
    return transition_source(j, key, "", TransitionSource::estimate) == TransitionSource::estimate;
  };
  if (is_correction(p.loss) && uses(p.loss, "transition")) return true;
  if (p.pipeline != Pipeline::reweight && p.pipeline != Pipeline::procedure) return false;
  const std::string kind = p.pipeline_spec.value("kind", "");
  if (kind == "pumpout") return uses(p.pipeline_spec, "transition");
  if (kind == "co_teaching")
    return !p.pipeline_spec.contains("noise_rate") || p.pipeline_spec.at("noise_rate") == "estimate";
  return kind == "clean";
}

void parse_dataset(const json& d, Plan& p) {
  if (!d.is_object()) bad("dataset", "must be an object");
  if (d.contains("csv")) {
    only_keys(d, "dataset", {"csv"});
    p.generator = Generator::csv;
    p.csv = get_or<std::string>(d, "csv", "", "dataset");
    if (p.csv.empty()) bad("dataset.csv", "must be a non-empty path");
    return;
  }
  const std::string gen = get_or<std::string>(d, "generator", "", "dataset");
  const std::uint64_t seed = get_or<std::uint64_t>(d, "seed", derive_seed(p.seed, 1), "dataset");
  if (gen == "blobs") {
    only_keys(d, "dataset", {"generator", "num_classes", "n_per_class", "dims", "separation", "seed"});
    p.generator = Generator::blobs;
    p.blobs.num_classes = get_or<int>(d, "num_classes", 2, "dataset");
    p.blobs.n_per_class = get_or<std::size_t>(d, "n_per_class", 100, "dataset");
    p.blobs.dims = get_or<std::size_t>(d, "dims", 2, "dataset");
    p.blobs.separation = get_or<double>(d, "separation", 8.0, "dataset");
    p.blobs.seed = seed;
    if (p.blobs.num_classes < 2) bad("dataset.num_classes", "must be >= 2");
    if (p.blobs.n_per_class < 2) bad("dataset.n_per_class", "must be >= 2");
    if (p.blobs.dims < 1) bad("dataset.dims", "must be >= 1");
  } else if (gen == "rings") {
    only_keys(d, "dataset", {"generator", "num_classes", "n_per_class", "noise_std", "seed"});
    p.generator = Generator::rings;
    p.rings.num_classes = get_or<int>(d, "num_classes", 2, "dataset");
    p.rings.n_per_class = get_or<std::size_t>(d, "n_per_class", 100, "dataset");
    p.rings.noise_std = get_or<double>(d, "noise_std", 0.1, "dataset");
    p.rings.seed = seed;
    if (p.rings.num_classes < 2) bad("dataset.num_classes", "must be >= 2");
    if (p.rings.n_per_class < 2) bad("dataset.n_per_class", "must be >= 2");
  } else {
    bad("dataset.generator", "must be 'blobs' or 'rings' (or give 'csv')");
  }
}

void parse_noise(const json& n, Plan& p) {
  if (!n.is_object()) bad("noise", "must be an object");
  const std::string kind = get_or<std::string>(n, "kind", "none", "noise");
  p.noise_seed = get_or<std::uint64_t>(n, "seed", derive_seed(p.seed, 3), "noise");
  if (kind == "none") {
    only_keys(n, "noise", {"kind", "seed"});
  } else if (kind == "symmetric") {
    only_keys(n, "noise", {"kind", "rho", "seed"});
    const double rho = get_or<double>(n, "rho", -1.0, "noise");
    if (!(rho >= 0.0 && rho < 1.0)) bad("noise.rho", "must lie in [0, 1)");
  } else if (kind == "matrix") {
    only_keys(n, "noise", {"kind", "transition", "seed"});
    if (!n.contains("transition")) bad("noise.transition", "is required");
  } else if (kind == "feature_dependent") {
    only_keys(n, "noise", {"kind", "rho_max", "beta", "seed"});
    const double rho_max = get_or<double>(n, "rho_max", 0.3, "noise");
    const double beta = get_or<double>(n, "beta", 0.25, "noise");
    if (!(rho_max >= 0.0 && rho_max < 1.0)) bad("noise.rho_max", "must lie in [0, 1)");
    if (!(beta >= 0.0)) bad("noise.beta", "must be >= 0");
  } else if (kind == "annotators") {
    only_keys(n, "noise", {"kind", "rhos", "confusions", "seed"});
    if (n.contains("rhos") == n.contains("confusions"))
      bad("noise", "annotators need exactly one of 'rhos' or 'confusions'");
    if (n.contains("rhos")) {
      const auto rhos = get_or<std::vector<double>>(n, "rhos", {}, "noise");
      if (rhos.empty()) bad("noise.rhos", "must be non-empty");
      for (double r : rhos)
        if (!(r >= 0.0 && r < 1.0)) bad("noise.rhos", "every rho must lie in [0, 1)");
    } else if (!n.at("confusions").is_array() || n.at("confusions").empty()) {
      bad("noise.confusions", "must be a non-empty array");
    }
  } else {
    bad("noise.kind", "unknown kind '" + kind + "'");
  }
  p.noise = n;
}

void parse_method(const json& m, Plan& p) {
  only_keys(m, "method", {"loss", "reweight", "annotators", "procedure", "noise_layer", "trusted_fraction"});
  if (m.contains("loss")) {
    p.loss = m.at("loss");
    if (!p.loss.is_object() || !p.loss.contains("kind")) bad("method.loss", "must be an object with 'kind'");
    const std::string kind = p.loss.at("kind").get<std::string>();
    static const std::set<std::string> known{"ce", "mae", "imae", "smooth_kl", "backward", "forward"};
    if (!known.contains(kind)) bad("method.loss.kind", "unknown loss '" + kind + "'");
    if (is_correction(p.loss)) transition_source(p.loss, "transition", "method.loss", TransitionSource::estimate);
  }
  std::vector<std::string> chosen;
  if (is_correction(p.loss)) chosen.push_back("loss correction");
  for (const char* key : {"reweight", "annotators", "procedure", "noise_layer"})
    if (m.contains(key)) chosen.push_back(key);
  if (chosen.size() > 1) {
    std::string list = chosen[0];
    for (std::size_t i = 1; i < chosen.size(); ++i) list += " + " + chosen[i];
    bad("method", "exactly one pipeline allowed, got " + list);
  }

  const std::string loss_kind = p.loss.at("kind").get<std::string>();
  p.pipeline = Pipeline::loss;
  p.pipeline_name = "loss:" + loss_kind;
  p.pipeline_spec = p.loss;
  auto need_ce = [&](const std::string& what) {
    if (loss_kind != "ce") bad("method.loss", what + " trains with cross-entropy only");
  };
  auto kind_of = [&](const char* key, std::initializer_list<const char*> kinds) {
    const json& s = m.at(key);
    if (!s.is_object()) bad(std::string("method.") + key, "must be an object");
    const std::string kind = s.value("kind", std::string());
    bool ok = false;
    for (const char* k : kinds) ok = ok || kind == k;
    if (!ok) bad(std::string("method.") + key + ".kind", "unknown kind '" + kind + "'");
    p.pipeline_spec = s;
    p.pipeline_name = std::string(key) + ":" + kind;
    return kind;
  };

  if (m.contains("reweight")) {
    p.pipeline = Pipeline::reweight;
    const std::string kind = kind_of("reweight", {"running", "rank_prune", "trimmed", "pumpout"});
    if (kind == "pumpout")
      transition_source(p.pipeline_spec, "transition", "method.reweight", TransitionSource::estimate);
    try {
      validate(reweight_from_json(p.pipeline_spec));
    } catch (const json::exception& e) {
      bad("method.reweight", e.what());
    }
  } else if (m.contains("annotators")) {
    p.pipeline = Pipeline::annotators;
    const std::string kind = kind_of("annotators", {"majority", "staple", "min_loss", "confusion"});
    if (kind == "min_loss" || kind == "confusion") need_ce("annotators:" + kind);
    if (p.noise.value("kind", "") != "annotators")
      bad("method.annotators", "needs noise.kind = 'annotators'");
  } else if (m.contains("procedure")) {
    p.pipeline = Pipeline::procedure;
    const std::string kind =
        kind_of("procedure", {"mixup", "co_teaching", "disagreement", "dual_relabel", "clean"});
    if (kind == "mixup" || kind == "dual_relabel") need_ce("procedure:" + kind);
    if (kind == "mixup" && !(get_or<double>(p.pipeline_spec, "alpha", 0.2, "method.procedure") > 0.0))
      bad("method.procedure.alpha", "must be positive");
    if (kind == "co_teaching" && p.pipeline_spec.contains("noise_rate")) {
      const json& r = p.pipeline_spec.at("noise_rate");
      if (!(r.is_number() || r == "true" || r == "estimate"))
        bad("method.procedure.noise_rate", "must be a number, \"true\" or \"estimate\"");
      if (r.is_number() && !(r.get<double>() >= 0.0 && r.get<double>() < 1.0))
        bad("method.procedure.noise_rate", "must lie in [0, 1)");
    }
    if (kind == "clean") {
      if (get_or<std::size_t>(p.pipeline_spec, "rounds", 3, "method.procedure") < 1)
        bad("method.procedure.rounds", "must be >= 1");
      if (get_or<std::size_t>(p.pipeline_spec, "ensemble_size", 3, "method.procedure") < 1)
        bad("method.procedure.ensemble_size", "must be >= 1");
    }
  } else if (m.contains("noise_layer")) {
    p.pipeline = Pipeline::noise_layer;
    p.pipeline_spec = m.at("noise_layer");
    p.pipeline_name = "noise_layer";
    need_ce("noise_layer");
    const double d = get_or<double>(p.pipeline_spec, "diag_prob", 0.9, "method.noise_layer");
    if (!(d > 0.0 && d < 1.0)) bad("method.noise_layer.diag_prob", "must lie in (0, 1)");
  }

  p.trusted_fraction = get_or<double>(m, "trusted_fraction", 0.1, "method");
  if (!(p.trusted_fraction > 0.0 && p.trusted_fraction < 1.0))
    bad("method.trusted_fraction", "must lie in (0, 1)");
  p.needs_trusted = needs_estimate(p);
  if (needs_truth_transition(p)) {
    const std::string kind = p.noise.value("kind", "none");
    if (kind == "feature_dependent" || kind == "annotators")
      bad("method", "a \"true\" transition needs class-conditional noise (none, symmetric or matrix)");
  }
}

void parse_train(const json& t, Plan& p) {
  only_keys(t, "train", {"epochs", "batch_size", "learning_rate", "arch"});
  p.train.epochs = get_or<std::size_t>(t, "epochs", 30, "train");
  p.train.batch_size = get_or<std::size_t>(t, "batch_size", 32, "train");
  p.train.learning_rate = get_or<double>(t, "learning_rate", 0.1, "train");
  if (t.contains("arch")) p.train.arch = arch_from_json(t.at("arch"));
  p.train.seed = derive_seed(p.seed, 4);
  try {
    p.train.validate();
  } catch (const Error& e) {
    bad("train", e.what());
  }
}

Plan make_plan(const json& j) {
  only_keys(j, "config", {"seed", "dataset", "test_fraction", "noise", "method", "train", "output"});
  Plan p;
  if (!j.contains("seed")) bad("seed", "is required");
  const json& seed = j.at("seed");
  if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0))
    bad("seed", "must be a non-negative integer");
  p.seed = seed.get<std::uint64_t>();
  if (!j.contains("dataset")) bad("dataset", "is required");
  parse_dataset(j.at("dataset"), p);
  p.test_fraction = get_or<double>(j, "test_fraction", 0.3, "config");
  if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) bad("test_fraction", "must lie in (0, 1)");
  parse_noise(j.value("noise", json{{"kind", "none"}}), p);
  parse_method(j.value("method", json::object()), p);
  parse_train(j.value("train", json::object()), p);
  return p;
}

// Rethrows library errors with the pipeline stage in front.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config_validation, std::string(name) + ": " + e.what());
  }
}

std::vector<TransitionMatrix> annotator_confusions(const json& noise, int k) {
  std::vector<TransitionMatrix> out;
  if (noise.contains("rhos")) {
    for (double r : noise.at("rhos").get<std::vector<double>>()) out.push_back(symmetric_transition(k, r));
  } else {
    for (const auto& t : noise.at("confusions")) out.push_back(t.get<TransitionMatrix>());
  }
  for (const auto& t : out)
    require(t.k() == k, ErrorKind::invalid_parameter, "annotator confusion class count differs from dataset");
  return out;
}

NoiseSpec noise_spec(const Plan& p) {
  NoiseSpec spec;
  spec.seed = p.noise_seed;
  const std::string kind = p.noise.value("kind", "none");
  if (kind == "symmetric") spec.kind = SymmetricNoise{p.noise.at("rho").get<double>()};
  if (kind == "matrix") spec.kind = MatrixNoise{p.noise.at("transition").get<TransitionMatrix>()};
  if (kind == "feature_dependent")
    spec.kind = FeatureNoise{{p.noise.value("rho_max", 0.3), p.noise.value("beta", 0.25)}};
  return spec;
}

LabeledDataset generate(const Plan& p) {
  switch (p.generator) {
    case Generator::blobs: return gen_blobs(p.blobs);
    case Generator::rings: return gen_rings(p.rings);
    case Generator::csv: break;
  }
  return load_csv(p.csv);
}

PreparedData prepare_plan(const Plan& p) {
  PreparedData out;
  const LabeledDataset data = stage("dataset", [&] { return generate(p); });
  auto [train_full, test] = stage("split", [&] { return split(data, p.test_fraction, derive_seed(p.seed, 2)); });
  if (!test.true_labels) test.true_labels = test.labels;
  out.test = std::move(test);

  LabeledDataset noisy = stage("noise", [&] {
    const int k = train_full.num_classes;
    if (p.noise.value("kind", "") == "annotators") {
      out.true_annotator_confusions = annotator_confusions(p.noise, k);
      Rng rng(p.noise_seed);
      LabeledDataset multi = simulate_annotators(train_full, out.true_annotator_confusions, rng);
      Labels first(multi.size());
      for (std::size_t i = 0; i < multi.size(); ++i) first[i] = (*multi.annotator_labels)[i][0];
      multi.labels = std::move(first);
      return multi;
    }
    const NoiseSpec spec = noise_spec(p);
    out.true_transition = generating_transition(spec, k);
    return apply_noise(train_full, spec);
  });

  if (p.needs_trusted) {
    stage("trusted split", [&] {
      const SplitIndices idx = split_indices(noisy, p.trusted_fraction, derive_seed(p.seed, 5));
      require(!idx.test.empty() && !idx.train.empty(), ErrorKind::invalid_input,
              "trusted_fraction leaves an empty trusted or training set");
      out.trusted = noisy.subset(idx.test);
      noisy = noisy.subset(idx.train);
    });
  }
  out.train_truth = *noisy.true_labels;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) flipped += noisy.labels[i] != out.train_truth[i] ? 1 : 0;
  out.realized_noise_rate = noisy.size() ? static_cast<double>(flipped) / static_cast<double>(noisy.size()) : 0.0;
  out.train = noisy.training_view();
  return out;
}

struct Outcome {
  ModelParams model;
  std::vector<EpochMetrics> history;
  json diagnostics = json::object();
};

json transition_json(const TransitionMatrix& t) { return t; }

class MethodRunner {
 public:
  MethodRunner(const Plan& plan, const PreparedData& data) : p_(plan), d_(data) {}

  Outcome run() {
    switch (p_.pipeline) {
      case Pipeline::loss: return run_loss();
      case Pipeline::reweight: return run_reweight();
      case Pipeline::annotators: return run_annotators();
      case Pipeline::procedure: return run_procedure();
      case Pipeline::noise_layer: return run_noise_layer();
    }
    fail(ErrorKind::config_validation, "unknown pipeline");
  }

 private:
  int k() const { return d_.train.num_classes; }

  // Fills in a transition for `source`, recording where it came from.
  TransitionMatrix resolve(TransitionSource source, const json& literal, Outcome& out) {
    TransitionMatrix t;
    std::string origin;
    if (source == TransitionSource::literal) {
      t = literal.get<TransitionMatrix>();
      origin = "given";
    } else if (source == TransitionSource::truth) {
      require(d_.true_transition.has_value(), ErrorKind::config_validation,
              "no generating transition exists for this noise kind");
      t = *d_.true_transition;
      origin = "true";
    } else {
      const LabeledDataset& trusted = *d_.trusted;
      t = estimate_transition(*trusted.true_labels, trusted.labels, k());
      origin = "estimate";
    }
    json diag{{"source", origin}, {"matrix", transition_json(t)}};
    if (origin == "estimate" && d_.true_transition) {
      diag["mean_row_l1_error"] = mean_row_l1(t, *d_.true_transition);
      diag["max_row_l1_error"] = max_row_l1(t, *d_.true_transition);
    }
    out.diagnostics["transition"] = std::move(diag);
    return t;
  }

  LossSpec base_loss() const { return loss_from_json(p_.loss); }

  TrainConfig config_with(LossSpec loss) const {
    TrainConfig c = p_.train;
    c.loss = std::move(loss);
    return c;
  }

  Outcome run_loss() {
    Outcome out;
    LossSpec loss;
    if (is_correction(p_.loss)) {
      json resolved = p_.loss;
      const auto src = transition_source(p_.loss, "transition", "method.loss", TransitionSource::estimate);
      resolved["transition"] = resolve(src, p_.loss.value("transition", json()), out);
      loss = loss_from_json(resolved);
    } else {
      loss = base_loss();
    }
    validate(loss, k());
    TrainResult r = train(d_.train, config_with(std::move(loss)), {}, &d_.test);
    out.model = std::move(r.params);
    out.history = std::move(r.history);
    return out;
  }

  Outcome run_reweight() {
    Outcome out;
    ReweightSpec spec = reweight_from_json(p_.pipeline_spec);
    if (auto* pump = std::get_if<PumpoutSpec>(&spec); pump && !pump->transition) {
      const auto src =
          transition_source(p_.pipeline_spec, "transition", "method.reweight", TransitionSource::estimate);
      pump->transition = resolve(src, json(), out);
    }
    validate(spec);
    const LossSpec loss = base_loss();
    validate(loss, k());
    TrainResult r = train(d_.train, config_with(loss), make_hooks(spec), &d_.test);
    out.model = std::move(r.params);
    out.history = std::move(r.history);
    return out;
  }

  json confusion_diagnostics(const AnnotatorModel& model) const {
    json conf = json::array();
    double l1_sum = 0.0;
    for (std::size_t a = 0; a < model.confusions.size(); ++a) {
      conf.push_back(transition_json(model.confusions[a]));
      const auto& truth = d_.true_annotator_confusions.at(a);
      l1_sum += mean_row_l1(model.confusions[a], truth);
    }
    return json{{"confusions", std::move(conf)},
                {"prior", model.prior},
                {"mean_row_l1_error", l1_sum / static_cast<double>(model.confusions.size())}};
  }

  json annotator_accuracies() const {
    const auto& ann = *d_.train.annotator_labels;
    std::vector<double> acc(d_.train.num_annotators(), 0.0);
    for (std::size_t i = 0; i < ann.size(); ++i)
      for (std::size_t a = 0; a < acc.size(); ++a) acc[a] += ann[i][a] == d_.train_truth[i] ? 1.0 : 0.0;
    for (double& v : acc) v /= static_cast<double>(ann.size());
    return acc;
  }

  Outcome run_annotators() {
    Outcome out;
    const std::string kind = p_.pipeline_spec.at("kind").get<std::string>();
    const auto& ann = *d_.train.annotator_labels;
    out.diagnostics["annotator_accuracy"] = annotator_accuracies();
    if (kind == "majority" || kind == "staple") {
      Labels fused;
      if (kind == "majority") {
        fused = majority_vote_all(ann);
      } else {
        StapleOptions o;
        o.max_iters = p_.pipeline_spec.value("max_iters", o.max_iters);
        o.tol = p_.pipeline_spec.value("tol", o.tol);
        StapleResult s = staple(ann, k(), o);
        json sd = confusion_diagnostics(s.model);
        sd["iterations"] = s.iterations;
        sd["converged"] = s.converged;
        sd["log_likelihood"] = s.log_likelihood.empty() ? 0.0 : s.log_likelihood.back();
        out.diagnostics["staple"] = std::move(sd);
        fused = std::move(s.fused);
      }
      out.diagnostics["fused_accuracy"] = accuracy(fused, d_.train_truth);
      const LossSpec loss = base_loss();
      validate(loss, k());
      TrainResult r = train(with_labels(d_.train, std::move(fused)), config_with(loss), {}, &d_.test);
      out.model = std::move(r.params);
      out.history = std::move(r.history);
    } else if (kind == "min_loss") {
      TrainResult r = train_min_loss(d_.train, config_with(CrossEntropy{}), &d_.test);
      out.model = std::move(r.params);
      out.history = std::move(r.history);
    } else {
      ConfusionTrainOptions o;
      o.lambda_trace = p_.pipeline_spec.value("lambda_trace", o.lambda_trace);
      o.init_diag = p_.pipeline_spec.value("init_diag", o.init_diag);
      ConfusionTrainResult r = train_with_confusion(d_.train, config_with(CrossEntropy{}), o, &d_.test);
      out.diagnostics["confusion"] = confusion_diagnostics(r.model);
      out.model = std::move(r.params);
      out.history = std::move(r.history);
    }
    return out;
  }

  Outcome run_procedure() {
    Outcome out;
    const json& s = p_.pipeline_spec;
    const std::string kind = s.at("kind").get<std::string>();
    const LossSpec loss = base_loss();
    validate(loss, k());
    const TrainConfig cfg = config_with(loss);
    if (kind == "mixup") {
      TrainResult r = train_mixup(d_.train, cfg, s.value("alpha", 0.2), &d_.test);
      out.model = std::move(r.params);
      out.history = std::move(r.history);
    } else if (kind == "co_teaching" || kind == "disagreement") {
      PeerTrainResult r;
      if (kind == "co_teaching") {
        CoTeachSchedule sched;
        sched.warmup_epochs = s.value("warmup_epochs", sched.warmup_epochs);
        sched.ramp_epochs = s.value("ramp_epochs", sched.ramp_epochs);
        const json rate = s.value("noise_rate", json("estimate"));
        if (rate.is_number()) {
          sched.noise_rate = rate.get<double>();
        } else {
          const TransitionMatrix t = resolve(rate == "true" ? TransitionSource::truth : TransitionSource::estimate,
                                             json(), out);
          double diag = 0.0;
          for (int c = 0; c < t.k(); ++c) diag += t(static_cast<std::size_t>(c), static_cast<std::size_t>(c));
          sched.noise_rate = std::clamp(1.0 - diag / t.k(), 0.0, 0.99);
        }
        out.diagnostics["keep_fraction_final"] = sched.keep_fraction(cfg.epochs == 0 ? 0 : cfg.epochs - 1);
        out.diagnostics["noise_rate_used"] = sched.noise_rate;
        r = train_co_teaching(d_.train, cfg, sched, &d_.test);
      } else {
        r = train_disagreement(d_.train, cfg, &d_.test);
      }
      out.model = std::move(r.models.a);
      out.history = std::move(r.history);
    } else if (kind == "dual_relabel") {
      DualRelabelResult r = train_dual_relabel(d_.train, cfg, s.value("warmup_epochs", std::size_t{1}),
                                               nullptr, &d_.test);
      json per_epoch = json::array();
      for (const auto& st : r.relabels)
        per_epoch.push_back({{"by_a", st.by_a}, {"by_b", st.by_b}, {"averaged", st.averaged}});
      out.diagnostics["relabel"] = {{"initial_agreement", accuracy(d_.train.labels, d_.train_truth)},
                                    {"final_agreement", r.store.agreement(d_.train_truth)},
                                    {"relabeled", r.store.relabeled_count()},
                                    {"per_epoch", std::move(per_epoch)}};
      out.model = std::move(r.models.a);
      out.history = std::move(r.history);
    } else {
      CleanOptions o;
      o.rounds = s.value("rounds", o.rounds);
      o.threshold = s.value("threshold", o.threshold);
      o.ensemble_size = s.value("ensemble_size", o.ensemble_size);
      CleanResult r = iterative_clean(d_.train, *d_.trusted, cfg, o, &d_.test);
      std::vector<bool> actual(d_.train.size());
      for (std::size_t i = 0; i < actual.size(); ++i) actual[i] = d_.train.labels[i] != d_.train_truth[i];
      const FlagQuality q = flag_quality(r.flags, actual);
      out.diagnostics["cleaning"] = {{"flags_per_round", r.flags_per_round},
                                     {"changed_per_round", r.changed_per_round},
                                     {"flagged", q.flagged},
                                     {"actual_flips", q.actual},
                                     {"precision", q.precision},
                                     {"recall", q.recall},
                                     {"f1", q.f1},
                                     {"final_agreement", r.store.agreement(d_.train_truth)}};
      out.model = std::move(r.final_model);
      out.history = std::move(r.history);
    }
    return out;
  }

  Outcome run_noise_layer() {
    Outcome out;
    const TrainConfig cfg = config_with(CrossEntropy{});
    ModelParams params = attach_noise_layer(
        init(cfg.arch.resolve(d_.train.dims(), static_cast<std::size_t>(k())), stream_seed(cfg.seed, SeedStream::init)),
        p_.pipeline_spec.value("diag_prob", 0.9));
    out.history = fit(params, d_.train, cfg, {}, &d_.test);
    const TransitionMatrix learned(realized_transition(params));
    json diag{{"learned", transition_json(learned)}};
    if (d_.true_transition) diag["mean_row_l1_error"] = mean_row_l1(learned, *d_.true_transition);
    out.diagnostics["noise_layer"] = std::move(diag);
    out.model = std::move(params);
    return out;
  }

  const Plan& p_;
  const PreparedData& d_;
};

json metrics_json(const Metrics& m) {
  json j{{"accuracy", m.accuracy},
         {"macro_f1", m.macro_f1},
         {"per_class_accuracy", m.per_class_accuracy},
         {"ece", m.ece}};
  if (m.auc) j["auc"] = *m.auc;
  return j;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(nlohmann::json j) {
  if (!j.is_object()) fail(ErrorKind::config_validation, "config: top level must be an object");
  const Plan p = make_plan(j);
  ExperimentConfig c;
  c.seed = p.seed;
  if (j.contains("output")) {
    if (!j.at("output").is_string()) bad("output", "must be a path string");
    c.output = j.at("output").get<std::string>();
  }
  c.raw = std::move(j);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed_override) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::config_validation, "config: " + path.string() + " is not valid JSON");
  if (seed_override && j.is_object()) j["seed"] = *seed_override;
  return from_json(std::move(j));
}

std::string ExperimentConfig::pipeline() const { return make_plan(raw).pipeline_name; }

TrainConfig ExperimentConfig::train_config() const { return make_plan(raw).train; }

PreparedData prepare(const ExperimentConfig& config) { return prepare_plan(make_plan(config.raw)); }

nlohmann::json ExperimentReport::to_json(bool include_wall_time) const {
  json epochs_json = json::array();
  for (const auto& e : epochs)
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"test_accuracy", optional_json(e.test_accuracy)},
                           {"test_macro_f1", optional_json(e.test_macro_f1)},
                           {"updated", e.updated},
                           {"skipped", e.skipped}});
  json j{{"schema_version", kReportSchemaVersion},
         {"version", version()},
         {"pipeline", pipeline},
         {"config", config},
         {"epochs", std::move(epochs_json)},
         {"final", metrics_json(final_metrics)},
         {"diagnostics", diagnostics}};
  if (include_wall_time) j["wall_time_seconds"] = wall_time_seconds;
  return j;
}

std::string ExperimentReport::epochs_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,test_accuracy,test_macro_f1,updated,skipped\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& e : epochs)
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << opt(e.test_accuracy) << ','
       << opt(e.test_macro_f1) << ',' << e.updated << ',' << e.skipped << '\n';
  return os.str();
}

std::filesystem::path epochs_csv_path(const std::filesystem::path& report_path) {
  std::filesystem::path p = report_path;
  p.replace_extension(".epochs.csv");
  return p;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& path) {
  write_file_atomic(path, report.to_json().dump(2) + "\n");
  write_file_atomic(epochs_csv_path(path), report.epochs_csv());
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const Plan plan = stage("config", [&] { return make_plan(config.raw); });
  const PreparedData data = prepare_plan(plan);

  Outcome outcome = stage("train", [&] { return MethodRunner(plan, data).run(); });

  ExperimentReport report;
  report.config = config.raw;
  report.pipeline = plan.pipeline_name;
  report.epochs = std::move(outcome.history);
  report.final_metrics = stage("evaluate", [&] {
    return metrics(predict_proba_all(outcome.model, data.test.features), *data.test.true_labels);
  });
  report.diagnostics = std::move(outcome.diagnostics);
  report.diagnostics["noise"] = {{"realized_rate", data.realized_noise_rate},
                                 {"train_size", data.train.size()},
                                 {"test_size", data.test.size()},
                                 {"trusted_size", data.trusted ? data.trusted->size() : 0}};
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (config.output) stage("write", [&] { write_report(report, *config.output); });
  return report;
}

}  // namespace nlab
