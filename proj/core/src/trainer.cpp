#include "nlab/trainer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "nlab/metrics.hpp"
#include "nlab/rng.hpp"

namespace nlab {

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::invalid_parameter, "train: epochs must be >= 1");
  require(batch_size >= 1, ErrorKind::invalid_parameter, "train: batch_size must be >= 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::invalid_parameter,
          "train: learning_rate must be finite and non-negative");
  if (arch.kind == ArchKind::mlp)
    require(arch.hidden >= 1 && arch.capacity_scale > 0.0, ErrorKind::invalid_parameter,
            "train: mlp needs hidden >= 1 and capacity_scale > 0");
}

void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"kind", a.kind == ArchKind::linear ? "linear" : "mlp"}};
  if (a.kind == ArchKind::mlp) {
    j["hidden"] = a.hidden;
    j["capacity_scale"] = a.capacity_scale;
  }
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  const std::string kind = j.value("kind", std::string("linear"));
  require(kind == "linear" || kind == "mlp", ErrorKind::config_validation,
          "arch: kind must be 'linear' or 'mlp'");
  a.kind = kind == "linear" ? ArchKind::linear : ArchKind::mlp;
  a.hidden = j.value("hidden", kDefaultHidden);
  a.capacity_scale = j.value("capacity_scale", 1.0);
  return a;
}

std::uint64_t stream_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index) noexcept {
  return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(stream)), index);
}

void GradientBuffer::add_noise_layer(const Matrix& grad_q, double weight) {
  Matrix& g = *grad_.noise_logits;
  for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += weight * grad_q.values()[i];
}

void GradientBuffer::apply(ModelParams& p, double learning_rate, std::size_t count) {
  if (count > 0) sgd_update(p, grad_, learning_rate / static_cast<double>(count));
  for (auto t : grad_.tensors()) std::fill(t.begin(), t.end(), 0.0);
}

namespace {

bool finite_all(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

[[noreturn]] void diverged(std::size_t epoch, const char* what) {
  fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1) + ": " + what);
}

struct SampleEval {
  double value = 0.0;
  std::vector<double> grad_logits;
  Matrix grad_q;
};

SampleEval eval_sample(const Matrix* mixing, const LossSpec& loss,
                       std::span<const double> probs, Label y) {
  if (mixing != nullptr) {
    MixingEval m = mixing_ce(*mixing, probs, y);
    return {m.value, std::move(m.grad_logits), std::move(m.grad_mix_logits)};
  }
  LossEval e = evaluate(loss, probs, y);
  return {e.value, std::move(e.grad_logits), {}};
}

}  // namespace

std::vector<EpochMetrics> fit(ModelParams& params, const LabeledDataset& data,
                              const TrainConfig& config, const TrainHooks& hooks,
                              const LabeledDataset* test) {
  config.validate();
  data.validate();
  require(data.size() >= 1, ErrorKind::invalid_input, "train: empty dataset");
  require(static_cast<std::size_t>(data.num_classes) == params.arch.classes, ErrorKind::shape,
          "train: dataset and model disagree on K");
  require(data.dims() == params.arch.dims, ErrorKind::shape,
          "train: dataset and model disagree on feature dimension");
  validate(config.loss, data.num_classes);
  if (params.noise_logits)
    require(std::holds_alternative<CrossEntropy>(config.loss), ErrorKind::invalid_parameter,
            "train: the noise-adaptation layer is trained with cross-entropy only");

  const std::size_t k = params.arch.classes;
  std::vector<EpochMetrics> history;
  history.reserve(config.epochs);
  GradientBuffer buffer(params);
  ForwardCache cache;
  ProbVector probs(k);
  std::optional<Matrix> mixing;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (hooks.select) {
      std::vector<double> losses(data.size());
      Matrix all_probs(data.size(), k);
      if (params.noise_logits) mixing = realized_transition(params);
      for (std::size_t i = 0; i < data.size(); ++i) {
        forward(params, data.features.row(i), cache);
        if (!finite_all(cache.logits)) diverged(epoch, "non-finite logits");
        softmax_into(cache.logits, all_probs.row(i));
        losses[i] =
            eval_sample(mixing ? &*mixing : nullptr, config.loss, all_probs.row(i), data.labels[i]).value;
      }
      order = hooks.select(EpochContext{epoch, params, data, losses, all_probs});
    } else {
      order.resize(data.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
    }
    Rng shuffler(stream_seed(config.seed, SeedStream::shuffle, epoch));
    shuffle(std::span<std::size_t>(order), shuffler);

    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      if (params.noise_logits) mixing = realized_transition(params);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const auto x = data.features.row(i);
        forward(params, x, cache);
        if (!finite_all(cache.logits)) diverged(epoch, "non-finite logits");
        softmax_into(cache.logits, probs);
        const SampleEval s =
            eval_sample(mixing ? &*mixing : nullptr, config.loss, probs, data.labels[i]);
        batch_loss += s.value;
        const double w = hooks.sample_weight ? hooks.sample_weight(s.value, probs, data.labels[i]) : 1.0;
        if (w == 0.0) {
          ++em.skipped;
          continue;
        }
        ++em.updated;
        buffer.add(params, x, cache, s.grad_logits, w);
        if (params.noise_logits) buffer.add_noise_layer(s.grad_q, w);
      }
      if (!std::isfinite(batch_loss / static_cast<double>(stop - start)))
        diverged(epoch, "non-finite mean batch loss");
      loss_sum += batch_loss;
      buffer.apply(params, config.learning_rate, stop - start);
    }
    if (!params.all_finite()) diverged(epoch, "non-finite parameters");
    em.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    if (test != nullptr && test->size() > 0) {
      const Labels& truth = test->true_labels ? *test->true_labels : test->labels;
      const std::vector<Label> pred = predict_all(params, test->features);
      em.test_accuracy = accuracy(pred, truth);
      em.test_macro_f1 = macro_f1(pred, truth, test->num_classes);
    }
    history.push_back(em);
  }
  return history;
}

TrainResult train(const LabeledDataset& data, const TrainConfig& config, const TrainHooks& hooks,
                  const LabeledDataset* test) {
  config.validate();
  TrainResult r;
  r.params = init(config.arch.resolve(data.dims(), static_cast<std::size_t>(data.num_classes)),
                  stream_seed(config.seed, SeedStream::init));
  r.history = fit(r.params, data, config, hooks, test);
  return r;
}

double evaluate_accuracy(const ModelParams& params, const LabeledDataset& data) {
  const Labels& truth = data.true_labels ? *data.true_labels : data.labels;
  return accuracy(predict_all(params, data.features), truth);
}

}  // namespace nlab
