#include "nlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "nlab/numerics.hpp"

namespace nlab {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  require(a == b, ErrorKind::invalid_input, "metrics: predictions and truth differ in length");
  require(a > 0, ErrorKind::invalid_input, "metrics: empty input");
}

}  // namespace

double accuracy(std::span<const Label> predictions, std::span<const Label> truth) {
  check_lengths(predictions.size(), truth.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const Label> predictions, std::span<const Label> truth, int k) {
  check_lengths(predictions.size(), truth.size());
  const auto n = static_cast<std::size_t>(k);
  std::vector<double> tp(n, 0.0), fp(n, 0.0), fn(n, 0.0), support(n, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predictions[i]);
    support[t] += 1.0;
    if (t == p) {
      tp[t] += 1.0;
    } else {
      fp[p] += 1.0;
      fn[t] += 1.0;
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    if (support[c] == 0.0) continue;
    sum += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
  }
  return sum / static_cast<double>(k);
}

double expected_calibration_error(std::span<const double> confidences, const std::vector<bool>& correct,
                                  std::size_t bins) {
  check_lengths(confidences.size(), correct.size());
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0), count(bins, 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = std::clamp(confidences[i], 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(c * static_cast<double>(bins)));
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
    count[b] += 1.0;
  }
  double ece = 0.0;
  const auto total = static_cast<double>(confidences.size());
  for (std::size_t b = 0; b < bins; ++b)
    if (count[b] > 0.0) ece += std::abs(hit_sum[b] - conf_sum[b]) / total;
  return ece;
}

double binary_auc(std::span<const double> scores, std::span<const Label> truth) {
  check_lengths(scores.size(), truth.size());
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties, then the rank-sum form of the Mann-Whitney U.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) rank[order[m]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(truth.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

Metrics metrics(std::span<const Label> predictions, std::span<const double> confidences,
                std::span<const Label> truth, int k) {
  check_lengths(predictions.size(), truth.size());
  check_lengths(confidences.size(), truth.size());
  Metrics m;
  m.accuracy = accuracy(predictions, truth);
  m.macro_f1 = macro_f1(predictions, truth, k);
  const auto n = static_cast<std::size_t>(k);
  std::vector<double> hits(n, 0.0), support(n, 0.0);
  std::vector<bool> correct(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    support[t] += 1.0;
    correct[i] = predictions[i] == truth[i];
    if (correct[i]) hits[t] += 1.0;
  }
  m.per_class_accuracy.resize(n);
  for (std::size_t c = 0; c < n; ++c) m.per_class_accuracy[c] = support[c] > 0.0 ? hits[c] / support[c] : 0.0;
  m.ece = expected_calibration_error(confidences, correct);
  return m;
}

Metrics metrics(const Matrix& probs, std::span<const Label> truth) {
  check_lengths(probs.rows(), truth.size());
  std::vector<Label> pred(probs.rows());
  std::vector<double> conf(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const std::size_t j = argmax(probs.row(i));
    pred[i] = static_cast<Label>(j);
    conf[i] = probs(i, j);
  }
  Metrics m = metrics(pred, conf, truth, static_cast<int>(probs.cols()));
  if (probs.cols() == 2) {
    std::vector<double> pos(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) pos[i] = probs(i, 1);
    m.auc = binary_auc(pos, truth);
  }
  return m;
}

FlagQuality flag_quality(const std::vector<bool>& flagged, const std::vector<bool>& actual) {
  require(flagged.size() == actual.size(), ErrorKind::invalid_input,
          "flag_quality: flag vectors differ in length");
  FlagQuality q;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    q.flagged += flagged[i] ? 1 : 0;
    q.actual += actual[i] ? 1 : 0;
    q.true_positive += flagged[i] && actual[i] ? 1 : 0;
  }
  q.precision = q.flagged == 0 ? 1.0 : static_cast<double>(q.true_positive) / static_cast<double>(q.flagged);
  q.recall = q.actual == 0 ? 1.0 : static_cast<double>(q.true_positive) / static_cast<double>(q.actual);
  q.f1 = q.precision + q.recall > 0.0 ? 2.0 * q.precision * q.recall / (q.precision + q.recall) : 0.0;
  return q;
}

std::vector<bool> flip_indicators(const LabeledDataset& ds) {
  require(ds.true_labels.has_value(), ErrorKind::invalid_input,
          "flip_indicators: dataset carries no true labels");
  std::vector<bool> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[i] = ds.labels[i] != (*ds.true_labels)[i];
  return out;
}

}  // namespace nlab
