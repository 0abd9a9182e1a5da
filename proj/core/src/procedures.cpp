#include "nlab/procedures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nlab/annotators.hpp"
#include "nlab/losses.hpp"

namespace nlab {

// ---------------------------------------------------------------------------
// SoftLabelStore

SoftLabelStore::SoftLabelStore(const Labels& labels, int num_classes) : k_(num_classes) {
  require(num_classes >= 2, ErrorKind::invalid_parameter, "label store: K must be >= 2");
  entries_.reserve(labels.size());
  for (Label y : labels) {
    require(y >= 0 && y < num_classes, ErrorKind::invalid_input, "label store: label outside [0, K)");
    entries_.push_back(StoredLabel{y, Provenance{}});
  }
}

void SoftLabelStore::check_forward(std::size_t i, std::size_t epoch) const {
  const Provenance& p = entries_.at(i).provenance;
  require(!p.relabeled || epoch >= p.epoch, ErrorKind::invalid_input,
          "label store: provenance cannot move backwards in epoch");
}

void SoftLabelStore::set_hard(std::size_t i, Label label, std::size_t epoch, std::string source) {
  check_forward(i, epoch);
  require(label >= 0 && label < k_, ErrorKind::invalid_input, "label store: label outside [0, K)");
  entries_[i] = StoredLabel{label, Provenance{true, epoch, std::move(source)}};
}

void SoftLabelStore::set_soft(std::size_t i, ProbVector label, std::size_t epoch, std::string source) {
  check_forward(i, epoch);
  require(label.size() == static_cast<std::size_t>(k_) && is_prob_vector(label),
          ErrorKind::invalid_input, "label store: soft label is not a probability vector over K");
  entries_[i] = StoredLabel{std::move(label), Provenance{true, epoch, std::move(source)}};
}

Label SoftLabelStore::hard_label(std::size_t i) const {
  const StoredLabel& e = entries_.at(i);
  if (const auto* y = std::get_if<Label>(&e.value)) return *y;
  return static_cast<Label>(argmax(std::get<ProbVector>(e.value)));
}

Labels SoftLabelStore::hard_labels() const {
  Labels out(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) out[i] = hard_label(i);
  return out;
}

ProbVector SoftLabelStore::target(std::size_t i) const {
  const StoredLabel& e = entries_.at(i);
  if (const auto* q = std::get_if<ProbVector>(&e.value)) return *q;
  ProbVector q(static_cast<std::size_t>(k_), 0.0);
  q[static_cast<std::size_t>(std::get<Label>(e.value))] = 1.0;
  return q;
}

LossEval SoftLabelStore::loss(std::size_t i, std::span<const double> probs) const {
  const StoredLabel& e = entries_.at(i);
  if (const auto* y = std::get_if<Label>(&e.value)) return evaluate(CrossEntropy{}, probs, *y);
  const auto& q = std::get<ProbVector>(e.value);
  return {kl_to_target(probs, q), kl_grad_logits(probs, q)};
}

double SoftLabelStore::agreement(std::span<const Label> truth) const {
  require(truth.size() == entries_.size() && !truth.empty(), ErrorKind::invalid_input,
          "label store: truth length differs from store");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) hits += hard_label(i) == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(entries_.size());
}

std::size_t SoftLabelStore::relabeled_count() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                [](const StoredLabel& e) { return e.provenance.relabeled; }));
}

void to_json(nlohmann::json& j, const SoftLabelStore& store) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const StoredLabel& e = store[i];
    nlohmann::json row;
    if (const auto* y = std::get_if<Label>(&e.value))
      row["label"] = *y;
    else
      row["soft"] = std::get<ProbVector>(e.value);
    if (e.provenance.relabeled)
      row["provenance"] = {{"relabeled", {{"epoch", e.provenance.epoch}, {"source", e.provenance.source}}}};
    else
      row["provenance"] = "original";
    entries.push_back(std::move(row));
  }
  j = nlohmann::json{{"num_classes", store.num_classes()}, {"entries", std::move(entries)}};
}

// ---------------------------------------------------------------------------
// Mixup

Matrix one_hot(std::span<const Label> labels, int k) {
  Matrix out(labels.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < k, ErrorKind::invalid_input, "one_hot: label outside [0, K)");
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

void mix_pair(std::span<const double> xi, std::span<const double> yi, std::span<const double> xj,
              std::span<const double> yj, double lambda, std::span<double> x_out,
              std::span<double> y_out) {
  for (std::size_t c = 0; c < x_out.size(); ++c) x_out[c] = lambda * xi[c] + (1.0 - lambda) * xj[c];
  for (std::size_t c = 0; c < y_out.size(); ++c) y_out[c] = lambda * yi[c] + (1.0 - lambda) * yj[c];
}

MixupBatch mixup(const Matrix& features, const Matrix& targets, double alpha, Rng& rng) {
  require(alpha > 0.0, ErrorKind::invalid_parameter, "mixup: alpha must be positive");
  require(features.rows() == targets.rows(), ErrorKind::shape, "mixup: features and targets differ in rows");
  const std::size_t n = features.rows();
  MixupBatch out;
  out.features = Matrix(n, features.cols());
  out.targets = Matrix(n, targets.cols());
  out.partners = permutation(n, rng);
  out.lambdas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = sample_beta(alpha, rng);
    out.lambdas[i] = lambda;
    const std::size_t j = out.partners[i];
    mix_pair(features.row(i), targets.row(i), features.row(j), targets.row(j), lambda,
             out.features.row(i), out.targets.row(i));
  }
  return out;
}

namespace {

bool finite_all(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void forward_checked(const ModelParams& p, std::span<const double> x, ForwardCache& cache,
                     std::size_t epoch) {
  forward(p, x, cache);
  if (!finite_all(cache.logits))
    fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1));
}

void score(EpochMetrics& em, const ModelParams& p, const LabeledDataset* test) {
  if (test == nullptr || test->size() == 0) return;
  const Labels& truth = test->true_labels ? *test->true_labels : test->labels;
  const auto pred = predict_all(p, test->features);
  em.test_accuracy = accuracy(pred, truth);
  em.test_macro_f1 = macro_f1(pred, truth, test->num_classes);
}

ModelParams init_from(const TrainConfig& config, const LabeledDataset& data, std::uint64_t index,
                      double capacity_scale = -1.0) {
  ArchSpec spec = config.arch;
  if (capacity_scale > 0.0) spec.capacity_scale = capacity_scale;
  return init(spec.resolve(data.dims(), static_cast<std::size_t>(data.num_classes)),
              stream_seed(config.seed, SeedStream::init, index));
}

}  // namespace

TrainResult train_mixup(const LabeledDataset& data, const TrainConfig& config, double alpha,
                        const LabeledDataset* test) {
  config.validate();
  data.validate();
  require(alpha > 0.0, ErrorKind::invalid_parameter, "mixup: alpha must be positive");
  TrainResult r;
  r.params = init_from(config, data, 0);
  GradientBuffer buffer(r.params);
  ForwardCache cache;
  ProbVector probs(static_cast<std::size_t>(data.num_classes));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(stream_seed(config.seed, SeedStream::shuffle, epoch));
    Rng mixer(stream_seed(config.seed, SeedStream::mixup, epoch));
    const auto order = permutation(data.size(), shuffler);
    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      const LabeledDataset sub = data.subset(batch);
      const Matrix sub_targets = one_hot(sub.labels, data.num_classes);
      const MixupBatch mixed = mixup(sub.features, sub_targets, alpha, mixer);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        forward_checked(r.params, mixed.features.row(b), cache, epoch);
        softmax_into(cache.logits, probs);
        loss_sum += kl_to_target(probs, mixed.targets.row(b));
        buffer.add(r.params, mixed.features.row(b), cache, kl_grad_logits(probs, mixed.targets.row(b)), 1.0);
        ++em.updated;
      }
      buffer.apply(r.params, config.learning_rate, batch.size());
    }
    em.train_loss = loss_sum / static_cast<double>(data.size());
    score(em, r.params, test);
    r.history.push_back(em);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Co-teaching and disagreement

std::vector<std::size_t> small_loss_selection(std::span<const double> losses, double keep_fraction) {
  require(keep_fraction > 0.0 && keep_fraction <= 1.0, ErrorKind::invalid_parameter,
          "co-teaching: keep_fraction must lie in (0, 1]");
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(losses.size()))));
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Per-sample loss under `loss` for every batch member, caching nothing.
std::vector<double> batch_losses(const ModelParams& p, const LabeledDataset& data,
                                 std::span<const std::size_t> batch, const LossSpec& loss) {
  std::vector<double> out(batch.size());
  ForwardCache cache;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    forward(p, data.features.row(batch[b]), cache);
    out[b] = evaluate(loss, softmax(cache.logits), data.labels[batch[b]]).value;
  }
  return out;
}

void sgd_on(ModelParams& p, const LabeledDataset& data, std::span<const std::size_t> samples,
            const LossSpec& loss, double learning_rate) {
  if (samples.empty()) return;
  GradientBuffer buffer(p);
  ForwardCache cache;
  for (std::size_t i : samples) {
    forward(p, data.features.row(i), cache);
    const LossEval e = evaluate(loss, softmax(cache.logits), data.labels[i]);
    buffer.add(p, data.features.row(i), cache, e.grad_logits, 1.0);
  }
  buffer.apply(p, learning_rate, samples.size());
}

}  // namespace

CoTeachStepStats co_teach_step(PeerModels& models, const LabeledDataset& data,
                               std::span<const std::size_t> batch, double keep_fraction,
                               const LossSpec& loss, double learning_rate) {
  const auto la = batch_losses(models.a, data, batch, loss);
  const auto lb = batch_losses(models.b, data, batch, loss);
  CoTeachStepStats s;
  for (std::size_t pos : small_loss_selection(la, keep_fraction)) s.chosen_by_a.push_back(batch[pos]);
  for (std::size_t pos : small_loss_selection(lb, keep_fraction)) s.chosen_by_b.push_back(batch[pos]);
  sgd_on(models.a, data, s.chosen_by_b, loss, learning_rate);
  sgd_on(models.b, data, s.chosen_by_a, loss, learning_rate);
  return s;
}

double CoTeachSchedule::keep_fraction(std::size_t epoch) const {
  if (epoch < warmup_epochs) return 1.0;
  const double progress =
      ramp_epochs == 0 ? 1.0
                       : std::min(1.0, static_cast<double>(epoch - warmup_epochs + 1) /
                                           static_cast<double>(ramp_epochs));
  return 1.0 - std::clamp(noise_rate, 0.0, 0.99) * progress;
}

namespace {

template <typename Step>
PeerTrainResult run_peers(const LabeledDataset& data, const TrainConfig& config,
                          const LabeledDataset* test, Step&& step) {
  config.validate();
  data.validate();
  validate(config.loss, data.num_classes);
  PeerTrainResult r{{init_from(config, data, 0), init_from(config, data, 1)}, {}};
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(stream_seed(config.seed, SeedStream::shuffle, epoch));
    const auto order = permutation(data.size(), shuffler);
    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      for (double l : batch_losses(r.models.a, data, batch, config.loss)) loss_sum += l;
      const std::size_t updated = step(r.models, batch, epoch);
      em.updated += updated;
      em.skipped += batch.size() - std::min(updated, batch.size());
    }
    if (!r.models.a.all_finite() || !r.models.b.all_finite() || !std::isfinite(loss_sum))
      fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1));
    em.train_loss = loss_sum / static_cast<double>(data.size());
    score(em, r.models.a, test);
    r.history.push_back(em);
  }
  return r;
}

}  // namespace

PeerTrainResult train_co_teaching(const LabeledDataset& data, const TrainConfig& config,
                                  const CoTeachSchedule& schedule, const LabeledDataset* test) {
  return run_peers(data, config, test,
                   [&](PeerModels& m, std::span<const std::size_t> batch, std::size_t epoch) {
                     const auto s = co_teach_step(m, data, batch, schedule.keep_fraction(epoch),
                                                  config.loss, config.learning_rate);
                     return s.chosen_by_b.size();
                   });
}

std::vector<bool> disagreement_mask(std::span<const Label> a, std::span<const Label> b) {
  require(a.size() == b.size(), ErrorKind::shape, "disagreement: prediction lengths differ");
  std::vector<bool> mask(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mask[i] = a[i] != b[i];
  return mask;
}

std::size_t disagreement_step(PeerModels& models, const LabeledDataset& data,
                              std::span<const std::size_t> batch, const LossSpec& loss,
                              double learning_rate) {
  require(models.a.arch.classes == models.b.arch.classes, ErrorKind::shape,
          "disagreement: models differ in K");
  Labels pa(batch.size()), pb(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    pa[b] = predict(models.a, data.features.row(batch[b]));
    pb[b] = predict(models.b, data.features.row(batch[b]));
  }
  const std::vector<bool> mask = disagreement_mask(pa, pb);
  std::vector<std::size_t> chosen;
  for (std::size_t b = 0; b < batch.size(); ++b)
    if (mask[b]) chosen.push_back(batch[b]);
  sgd_on(models.a, data, chosen, loss, learning_rate);
  sgd_on(models.b, data, chosen, loss, learning_rate);
  return chosen.size();
}

PeerTrainResult train_disagreement(const LabeledDataset& data, const TrainConfig& config,
                                   const LabeledDataset* test) {
  return run_peers(data, config, test,
                   [&](PeerModels& m, std::span<const std::size_t> batch, std::size_t) {
                     return disagreement_step(m, data, batch, config.loss, config.learning_rate);
                   });
}

// ---------------------------------------------------------------------------
// Dual relabel

RelabelStats dual_relabel_epoch(PeerModels& models, const LabeledDataset& data, SoftLabelStore& store,
                                const TrainConfig& config, std::size_t epoch) {
  require(store.size() == data.size(), ErrorKind::shape, "dual relabel: store size differs from data");
  const std::size_t k = static_cast<std::size_t>(data.num_classes);
  Rng shuffler(stream_seed(config.seed, SeedStream::peer, epoch));
  const auto order = permutation(data.size(), shuffler);
  GradientBuffer buf_a(models.a), buf_b(models.b);
  ForwardCache ca, cb;
  ProbVector pa(k), pb(k);

  auto train_one = [&](const ModelParams& self, GradientBuffer& buf, const ForwardCache& cache,
                       std::span<const double> probs, std::size_t i, Label peer_label,
                       std::span<const double> x) {
    const LossEval stored = store.loss(i, probs);
    const LossEval peer = evaluate(CrossEntropy{}, probs, peer_label);
    buf.add(self, x, cache, peer.value < stored.value ? peer.grad_logits : stored.grad_logits, 1.0);
  };

  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    for (std::size_t b = start; b < stop; ++b) {
      const std::size_t i = order[b];
      const auto x = data.features.row(i);
      forward_checked(models.a, x, ca, epoch);
      forward_checked(models.b, x, cb, epoch);
      softmax_into(ca.logits, pa);
      softmax_into(cb.logits, pb);
      train_one(models.a, buf_a, ca, pa, i, static_cast<Label>(argmax(pb)), x);
      train_one(models.b, buf_b, cb, pb, i, static_cast<Label>(argmax(pa)), x);
    }
    buf_a.apply(models.a, config.learning_rate, stop - start);
    buf_b.apply(models.b, config.learning_rate, stop - start);
  }

  RelabelStats stats;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.features.row(i);
    const ProbVector qa = predict_proba(models.a, x);
    const ProbVector qb = predict_proba(models.b, x);
    const auto ya = static_cast<Label>(argmax(qa));
    const auto yb = static_cast<Label>(argmax(qb));
    const bool lower_a = ce(qa, ya) < store.loss(i, qa).value;
    const bool lower_b = ce(qb, yb) < store.loss(i, qb).value;
    if (lower_a && lower_b) {
      ProbVector avg(k);
      for (std::size_t c = 0; c < k; ++c) avg[c] = 0.5 * (qa[c] + qb[c]);
      store.set_soft(i, std::move(avg), epoch, "both");
      ++stats.averaged;
    } else if (lower_a) {
      store.set_hard(i, ya, epoch, "a");
      ++stats.by_a;
    } else if (lower_b) {
      store.set_hard(i, yb, epoch, "b");
      ++stats.by_b;
    }
  }
  return stats;
}

DualRelabelResult train_dual_relabel(const LabeledDataset& data, const TrainConfig& config,
                                     std::size_t warmup_epochs, const Labels* truth,
                                     const LabeledDataset* test) {
  config.validate();
  data.validate();
  require(warmup_epochs >= 1, ErrorKind::invalid_parameter,
          "dual relabel: both models need at least one warm-up epoch");
  DualRelabelResult r;
  r.models = {init_from(config, data, 0, kDualSmallScale), init_from(config, data, 1, kDualLargeScale)};
  r.store = SoftLabelStore(data.labels, data.num_classes);
  if (truth) r.initial_agreement = r.store.agreement(*truth);

  TrainConfig warm = config;
  warm.epochs = warmup_epochs;
  warm.loss = CrossEntropy{};
  fit(r.models.a, data, warm);
  warm.seed = stream_seed(config.seed, SeedStream::peer, 1u << 20);
  fit(r.models.b, data, warm);

  for (std::size_t e = 1; e <= config.epochs; ++e) {
    r.relabels.push_back(dual_relabel_epoch(r.models, data, r.store, config, e));
    EpochMetrics em;
    em.epoch = e;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
      loss_sum += r.store.loss(i, predict_proba(r.models.a, data.features.row(i))).value;
    em.train_loss = loss_sum / static_cast<double>(data.size());
    em.updated = data.size();
    score(em, r.models.a, test);
    r.history.push_back(em);
  }
  if (truth) r.final_agreement = r.store.agreement(*truth);
  return r;
}

// ---------------------------------------------------------------------------
// Iterative cleaning

Matrix class_centroids(const Matrix& features, std::span<const Label> labels, int k) {
  require(features.rows() == labels.size(), ErrorKind::shape, "centroids: label count mismatch");
  Matrix c(static_cast<std::size_t>(k), features.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    counts[y] += 1.0;
    for (std::size_t j = 0; j < features.cols(); ++j) c(y, j) += features(i, j);
  }
  for (std::size_t y = 0; y < c.rows(); ++y)
    if (counts[y] > 0.0)
      for (std::size_t j = 0; j < c.cols(); ++j) c(y, j) /= counts[y];
  return c;
}

std::vector<CleaningMetaFeatures> meta_features(std::span<const ModelParams> ensemble,
                                                const Matrix& features, std::span<const Label> labels,
                                                const Matrix& centroids) {
  require(!ensemble.empty(), ErrorKind::invalid_parameter, "meta_features: empty ensemble");
  require(features.rows() == labels.size(), ErrorKind::shape, "meta_features: label count mismatch");
  std::vector<CleaningMetaFeatures> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto x = features.row(i);
    const ProbVector p = predict_proba(ensemble.front(), x);
    ProbVector sorted = p;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    CleaningMetaFeatures& f = out[i];
    f.loss = ce(p, labels[i]);
    f.max_prob = sorted[0];
    f.margin = sorted[0] - (sorted.size() > 1 ? sorted[1] : 0.0);
    f.disagreement = ensemble.size() >= 2 ? ensemble_disagreement(ensemble, x) : 0.0;
    double s = 0.0;
    const auto c = centroids.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - c[j]) * (x[j] - c[j]);
    f.centroid_distance = std::sqrt(s);
  }
  return out;
}

double MetaClassifier::flip_probability(const CleaningMetaFeatures& f) const {
  const auto raw = f.as_array();
  std::array<double, kMetaFeatureCount> z{};
  for (std::size_t j = 0; j < kMetaFeatureCount; ++j) z[j] = (raw[j] - mean[j]) / scale[j];
  return predict_proba(model, z)[1];
}

MetaClassifier train_meta_classifier(std::span<const CleaningMetaFeatures> features,
                                     std::span<const int> targets, const MetaTrainOptions& options) {
  require(!features.empty() && features.size() == targets.size(), ErrorKind::invalid_input,
          "meta classifier: need one target per feature row");
  MetaClassifier m;
  const auto n = static_cast<double>(features.size());
  for (const auto& f : features) {
    const auto a = f.as_array();
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) m.mean[j] += a[j] / n;
  }
  for (const auto& f : features) {
    const auto a = f.as_array();
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) m.scale[j] += (a[j] - m.mean[j]) * (a[j] - m.mean[j]) / n;
  }
  for (double& s : m.scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;

  LabeledDataset meta;
  meta.num_classes = 2;
  meta.features = Matrix(features.size(), kMetaFeatureCount);
  meta.labels.resize(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto a = features[i].as_array();
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) meta.features(i, j) = (a[j] - m.mean[j]) / m.scale[j];
    require(targets[i] == 0 || targets[i] == 1, ErrorKind::invalid_input, "meta classifier: targets must be 0/1");
    meta.labels[i] = targets[i];
  }
  TrainConfig cfg;
  cfg.epochs = options.epochs;
  cfg.batch_size = features.size();
  cfg.learning_rate = options.learning_rate;
  cfg.seed = options.seed;
  m.model = train(meta, cfg).params;
  return m;
}

CleanResult iterative_clean(const LabeledDataset& noisy_in, const LabeledDataset& clean_small,
                            const TrainConfig& config, const CleanOptions& options,
                            const LabeledDataset* test) {
  config.validate();
  require(clean_small.size() > 0, ErrorKind::invalid_input, "iterative_clean: empty clean set");
  require(clean_small.true_labels.has_value(), ErrorKind::invalid_input,
          "iterative_clean: clean set must carry verified labels");
  require(clean_small.num_classes == noisy_in.num_classes && clean_small.dims() == noisy_in.dims(),
          ErrorKind::invalid_input, "iterative_clean: clean and noisy sets differ in shape");
  require(options.rounds >= 1 && options.ensemble_size >= 1, ErrorKind::invalid_parameter,
          "iterative_clean: need rounds >= 1 and ensemble_size >= 1");
  const LabeledDataset noisy = noisy_in.training_view();
  const int k = noisy.num_classes;

  std::vector<int> targets(clean_small.size());
  for (std::size_t i = 0; i < clean_small.size(); ++i)
    targets[i] = clean_small.labels[i] != (*clean_small.true_labels)[i] ? 1 : 0;

  CleanResult r;
  r.store = SoftLabelStore(noisy.labels, k);
  r.flags.assign(noisy.size(), false);
  for (std::size_t round = 0; round < options.rounds; ++round) {
    const LabeledDataset current = with_labels(noisy, r.store.hard_labels());
    std::vector<ModelParams> ensemble;
    for (std::size_t m = 0; m < options.ensemble_size; ++m) {
      TrainConfig cfg = config;
      cfg.seed = stream_seed(config.seed, SeedStream::ensemble, round * options.ensemble_size + m);
      ensemble.push_back(train(current, cfg).params);
    }
    const Matrix centroids = class_centroids(current.features, current.labels, k);
    const auto noisy_feats = meta_features(ensemble, current.features, current.labels, centroids);
    const auto clean_feats = meta_features(ensemble, clean_small.features, clean_small.labels, centroids);
    MetaTrainOptions meta_opt = options.meta;
    meta_opt.seed = stream_seed(config.seed, SeedStream::ensemble, 1'000'000 + round);
    r.meta = train_meta_classifier(clean_feats, targets, meta_opt);

    std::size_t flagged = 0, changed = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      const Label pred = predict(ensemble.front(), current.features.row(i));
      if (pred == current.labels[i]) continue;  // only disputed samples are candidates
      if (r.meta.flip_probability(noisy_feats[i]) <= options.threshold) continue;
      ++flagged;
      r.flags[i] = true;
      r.store.set_hard(i, pred, round + 1, "meta");
      ++changed;
    }
    r.flags_per_round.push_back(flagged);
    r.changed_per_round.push_back(changed);
  }
  const LabeledDataset cleaned = with_labels(noisy, r.store.hard_labels());
  TrainResult fin = train(cleaned, config, {}, test);
  r.final_model = std::move(fin.params);
  r.history = std::move(fin.history);
  return r;
}

}  // namespace nlab
