#include "nlab/annotators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nlab/losses.hpp"
#include "nlab/metrics.hpp"

namespace nlab {

void to_json(nlohmann::json& j, const AnnotatorModel& m) {
  nlohmann::json confusions = nlohmann::json::array();
  for (const auto& c : m.confusions) confusions.push_back(c.matrix().to_rows());
  j = nlohmann::json{{"prior", m.prior}, {"confusions", confusions}};
}

void from_json(const nlohmann::json& j, AnnotatorModel& m) {
  m.prior = j.at("prior").get<ProbVector>();
  require(is_prob_vector(m.prior), ErrorKind::parse, "annotator model: prior is not a probability vector");
  m.confusions.clear();
  for (const auto& rows : j.at("confusions"))
    m.confusions.push_back(TransitionMatrix::from_rows(rows.get<std::vector<std::vector<double>>>()));
}

Label majority_vote(std::span<const Label> labels) {
  require(!labels.empty(), ErrorKind::invalid_input, "majority_vote: no labels");
  std::map<Label, std::size_t> counts;
  for (Label y : labels) ++counts[y];
  Label best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts)  // ascending label order
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  return best;
}

Labels majority_vote_all(const std::vector<Labels>& annotator_labels) {
  Labels out;
  out.reserve(annotator_labels.size());
  for (const auto& row : annotator_labels) out.push_back(majority_vote(row));
  return out;
}

StapleResult staple(const std::vector<Labels>& ann, int k, const StapleOptions& opt) {
  require(!ann.empty(), ErrorKind::invalid_input, "staple: no samples");
  const std::size_t n = ann.size();
  const std::size_t a_count = ann.front().size();
  require(a_count >= 2, ErrorKind::invalid_input, "staple: need at least two annotators");
  require(k >= 2, ErrorKind::invalid_parameter, "staple: K must be >= 2");
  require(opt.init_diag > 0.0 && opt.init_diag < 1.0, ErrorKind::invalid_parameter,
          "staple: init_diag must lie in (0, 1)");
  const auto kk = static_cast<std::size_t>(k);
  for (const auto& row : ann) {
    require(row.size() == a_count, ErrorKind::invalid_input, "staple: ragged annotator labels");
    for (Label y : row)
      require(y >= 0 && y < k, ErrorKind::invalid_input, "staple: label outside [0, K)");
  }

  std::vector<Matrix> theta(a_count, Matrix(kk, kk, (1.0 - opt.init_diag) / static_cast<double>(k - 1)));
  for (auto& t : theta)
    for (std::size_t c = 0; c < kk; ++c) t(c, c) = opt.init_diag;
  std::vector<double> prior(kk, 1.0 / static_cast<double>(k));

  StapleResult out;
  out.posteriors = Matrix(n, kk);
  std::vector<double> logp(kk);

  auto e_step = [&]() {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kk; ++c) {
        double s = std::log(prior[c]);
        for (std::size_t a = 0; a < a_count; ++a)
          s += std::log(theta[a](c, static_cast<std::size_t>(ann[i][a])));
        logp[c] = s;
      }
      const double hi = *std::max_element(logp.begin(), logp.end());
      double z = 0.0;
      for (std::size_t c = 0; c < kk; ++c) z += std::exp(logp[c] - hi);
      for (std::size_t c = 0; c < kk; ++c) out.posteriors(i, c) = std::exp(logp[c] - hi) / z;
      ll += hi + std::log(z);
    }
    double penalty = 0.0;
    for (const auto& t : theta)
      for (double v : t.values()) penalty += std::log(v);
    for (double p : prior) penalty += std::log(p);
    out.log_likelihood.push_back(ll + opt.smoothing * penalty);
  };

  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    e_step();
    ++out.iterations;
    double delta = 0.0;
    for (std::size_t a = 0; a < a_count; ++a) {
      Matrix counts(kk, kk, opt.smoothing);
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(ann[i][a]);
        for (std::size_t c = 0; c < kk; ++c) counts(c, j) += out.posteriors(i, c);
      }
      for (std::size_t c = 0; c < kk; ++c) {
        double total = 0.0;
        for (std::size_t j = 0; j < kk; ++j) total += counts(c, j);
        for (std::size_t j = 0; j < kk; ++j) {
          const double v = counts(c, j) / total;
          delta = std::max(delta, std::abs(v - theta[a](c, j)));
          theta[a](c, j) = v;
        }
      }
    }
    std::vector<double> mass(kk, opt.smoothing);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kk; ++c) mass[c] += out.posteriors(i, c);
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    for (std::size_t c = 0; c < kk; ++c) {
      const double v = mass[c] / total;
      delta = std::max(delta, std::abs(v - prior[c]));
      prior[c] = v;
    }
    if (delta < opt.tol) {
      out.converged = true;
      break;
    }
  }
  e_step();  // posteriors for the final parameters

  out.model.prior = prior;
  for (auto& t : theta) out.model.confusions.emplace_back(std::move(t));
  out.fused.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.fused[i] = static_cast<Label>(argmax(out.posteriors.row(i)));
  return out;
}

MinLossChoice min_loss_label(std::span<const double> losses, std::span<const Label> labels) {
  require(!losses.empty() && losses.size() == labels.size(), ErrorKind::invalid_input,
          "min_loss_label: need one finite loss per annotator label");
  std::size_t best = 0;
  for (std::size_t a = 0; a < losses.size(); ++a) {
    require(std::isfinite(losses[a]), ErrorKind::invalid_input, "min_loss_label: non-finite loss");
    if (losses[a] < losses[best]) best = a;
  }
  return {best, labels[best]};
}

namespace {

void require_annotators(const LabeledDataset& data, const char* who) {
  require(data.annotator_labels.has_value() && data.num_annotators() >= 1, ErrorKind::invalid_input,
          std::string(who) + ": dataset has no annotator labels");
}

double evaluate_into(EpochMetrics& em, const ModelParams& p, const LabeledDataset* test) {
  if (test == nullptr || test->size() == 0) return 0.0;
  const Labels& truth = test->true_labels ? *test->true_labels : test->labels;
  const auto pred = predict_all(p, test->features);
  em.test_accuracy = accuracy(pred, truth);
  em.test_macro_f1 = macro_f1(pred, truth, test->num_classes);
  return *em.test_accuracy;
}

bool finite_all(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train_min_loss(const LabeledDataset& data, const TrainConfig& config,
                           const LabeledDataset* test) {
  config.validate();
  require_annotators(data, "train_min_loss");
  TrainResult r;
  r.params = init(config.arch.resolve(data.dims(), static_cast<std::size_t>(data.num_classes)),
                  stream_seed(config.seed, SeedStream::init));
  GradientBuffer buffer(r.params);
  ForwardCache cache;
  ProbVector probs(static_cast<std::size_t>(data.num_classes));
  const std::size_t a_count = data.num_annotators();
  std::vector<double> losses(a_count);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(stream_seed(config.seed, SeedStream::shuffle, epoch));
    const auto order = permutation(data.size(), shuffler);
    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        forward(r.params, data.features.row(i), cache);
        if (!finite_all(cache.logits))
          fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1));
        softmax_into(cache.logits, probs);
        const Labels& row = (*data.annotator_labels)[i];
        for (std::size_t a = 0; a < a_count; ++a) losses[a] = ce(probs, row[a]);
        const MinLossChoice choice = min_loss_label(losses, row);
        loss_sum += losses[choice.annotator];
        buffer.add(r.params, data.features.row(i), cache, ce_grad_logits(probs, choice.label), 1.0);
        ++em.updated;
      }
      buffer.apply(r.params, config.learning_rate, stop - start);
    }
    em.train_loss = loss_sum / static_cast<double>(data.size());
    evaluate_into(em, r.params, test);
    r.history.push_back(em);
  }
  return r;
}

ConfusionTrainResult train_with_confusion(const LabeledDataset& data, const TrainConfig& config,
                                          const ConfusionTrainOptions& options,
                                          const LabeledDataset* test) {
  config.validate();
  require_annotators(data, "train_with_confusion");
  require(options.lambda_trace >= 0.0, ErrorKind::invalid_parameter,
          "train_with_confusion: lambda_trace must be >= 0");
  const auto k = static_cast<std::size_t>(data.num_classes);
  const std::size_t a_count = data.num_annotators();

  ConfusionTrainResult r;
  r.params = init(config.arch.resolve(data.dims(), k), stream_seed(config.seed, SeedStream::init));
  std::vector<Matrix> logits(a_count, identity_leaning_logits(k, options.init_diag));
  {
    const Matrix a0 = row_softmax(logits.front());
    double trace = 0.0;
    for (std::size_t c = 0; c < k; ++c) trace += a0(c, c);
    r.initial_trace_penalty = options.lambda_trace * static_cast<double>(a_count) * trace;
  }

  GradientBuffer buffer(r.params);
  std::vector<Matrix> grad_q(a_count, Matrix(k, k));
  std::vector<Matrix> mixing(a_count);
  ForwardCache cache;
  ProbVector probs(k);
  std::vector<double> grad_logits(k);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(stream_seed(config.seed, SeedStream::shuffle, epoch));
    const auto order = permutation(data.size(), shuffler);
    EpochMetrics em;
    em.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::size_t count = stop - start;
      for (std::size_t a = 0; a < a_count; ++a) {
        mixing[a] = row_softmax(logits[a]);
        grad_q[a].fill(0.0);
      }
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        forward(r.params, data.features.row(i), cache);
        if (!finite_all(cache.logits))
          fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1));
        softmax_into(cache.logits, probs);
        std::fill(grad_logits.begin(), grad_logits.end(), 0.0);
        const Labels& row = (*data.annotator_labels)[i];
        for (std::size_t a = 0; a < a_count; ++a) {
          const MixingEval m = mixing_ce(mixing[a], probs, row[a]);
          batch_loss += m.value;
          for (std::size_t c = 0; c < k; ++c) grad_logits[c] += m.grad_logits[c];
          for (std::size_t v = 0; v < k * k; ++v) grad_q[a].values()[v] += m.grad_mix_logits.values()[v];
        }
        buffer.add(r.params, data.features.row(i), cache, grad_logits, 1.0);
        ++em.updated;
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::diverged, "training diverged in epoch " + std::to_string(epoch + 1));
      loss_sum += batch_loss;
      buffer.apply(r.params, config.learning_rate, count);
      // d trace(A)/dQ[i][m] = A[i][i] ([i == m] - A[i][m])
      for (std::size_t a = 0; a < a_count; ++a) {
        const Matrix& am = mixing[a];
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t m = 0; m < k; ++m) {
            const double trace_grad = am(i, i) * ((i == m ? 1.0 : 0.0) - am(i, m));
            const double g = grad_q[a](i, m) / static_cast<double>(count) +
                             options.lambda_trace * trace_grad;
            logits[a](i, m) -= config.learning_rate * g;
          }
      }
    }
    em.train_loss = loss_sum / static_cast<double>(data.size());
    evaluate_into(em, r.params, test);
    r.history.push_back(em);
  }

  for (const auto& q : logits) r.model.confusions.emplace_back(row_softmax(q));
  // No separate prior is estimated; report the classifier's mean prediction instead.
  const Matrix all = predict_proba_all(r.params, data.features);
  r.model.prior.assign(k, 0.0);
  for (std::size_t i = 0; i < all.rows(); ++i)
    for (std::size_t c = 0; c < k; ++c) r.model.prior[c] += all(i, c) / static_cast<double>(all.rows());
  return r;
}

LabeledDataset with_labels(const LabeledDataset& data, Labels labels) {
  require(labels.size() == data.size(), ErrorKind::shape, "with_labels: label count mismatch");
  LabeledDataset out = data;
  out.labels = std::move(labels);
  return out;
}

}  // namespace nlab
