#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "nlab/annotators.hpp"
#include "nlab/dataset.hpp"
#include "nlab/metrics.hpp"
#include "nlab/noise.hpp"

using namespace nlab;
using nlab::test::error_kind;

namespace {

// Labels only; features are a dummy column.
std::vector<Labels> simulate(const std::vector<TransitionMatrix>& conf, std::size_t n, int k, Rng& rng,
                             Labels& truth) {
  truth.resize(n);
  std::vector<Labels> out(n, Labels(conf.size()));
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<Label>(i % static_cast<std::size_t>(k));
    for (std::size_t a = 0; a < conf.size(); ++a)
      out[i][a] = static_cast<Label>(sample_categorical(conf[a].row(static_cast<std::size_t>(truth[i])), rng));
  }
  return out;
}

double diag_mean(const TransitionMatrix& t) {
  double s = 0;
  for (int c = 0; c < t.k(); ++c) s += t(c, c);
  return s / t.k();
}

}  // namespace

TEST_SUITE("annotators") {

TEST_CASE("majority_vote examples") {
  CHECK(majority_vote(Labels{0, 0, 1}) == 0);
  CHECK(majority_vote(Labels{0, 1}) == 0);
  CHECK(majority_vote(Labels{1, 0}) == 0);
  CHECK(majority_vote(Labels{2, 2, 2}) == 2);
  CHECK(error_kind([] { majority_vote(Labels{}); }) == ErrorKind::invalid_input);
}

TEST_CASE("property: majority_vote is equivariant under class relabeling") {
  Rng rng(1);
  int untied = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const std::size_t a = 1 + rng.below(7);
    Labels v(a);
    for (auto& y : v) y = static_cast<Label>(rng.below(static_cast<std::uint64_t>(k)));
    std::vector<int> counts(static_cast<std::size_t>(k));
    for (Label y : v) ++counts[static_cast<std::size_t>(y)];
    const int top = *std::max_element(counts.begin(), counts.end());
    if (std::count(counts.begin(), counts.end(), top) > 1) continue;
    ++untied;
    const auto perm = permutation(static_cast<std::size_t>(k), rng);
    Labels w(a);
    for (std::size_t i = 0; i < a; ++i) w[i] = static_cast<Label>(perm[static_cast<std::size_t>(v[i])]);
    CHECK(majority_vote(w) == static_cast<Label>(perm[static_cast<std::size_t>(majority_vote(v))]));
  }
  CHECK(untied > 500);
}

TEST_CASE("staple with unanimous annotators returns the consensus") {
  Rng rng(2);
  Labels truth;
  const std::vector<TransitionMatrix> conf(3, TransitionMatrix::identity(3));
  const auto ann = simulate(conf, 300, 3, rng, truth);
  const auto r = staple(ann, 3);
  CHECK(r.fused == truth);
  for (const auto& t : r.model.confusions)
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 3; ++j)
        if (j != c) CHECK(t(c, c) > t(c, j));
  CHECK(r.converged);
  // Two EM iterations already land on the consensus; the tolerance stop needs one more
  // M-step to observe the parameters settle.
  const auto capped = staple(ann, 3, {2, 1e-6, 0.8, 1e-9});
  CHECK(capped.iterations == 2);
  CHECK(capped.fused == truth);
  for (const auto& t : capped.model.confusions)
    for (int c = 0; c < 3; ++c) CHECK(t(c, c) > 0.99);
}

TEST_CASE("staple recovers five annotators of known quality") {
  Rng rng(9);
  const std::vector<double> rhos{0.1, 0.15, 0.2, 0.25, 0.3};
  std::vector<TransitionMatrix> conf;
  for (double r : rhos) conf.push_back(symmetric_transition(3, r));
  Labels truth;
  const auto ann = simulate(conf, 5000, 3, rng, truth);
  const auto r = staple(ann, 3);
  double best_single = 0;
  for (std::size_t a = 0; a < rhos.size(); ++a) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(r.model.confusions[a](c, c) - (1 - rhos[a])) <= 0.05);
    Labels single(ann.size());
    for (std::size_t i = 0; i < ann.size(); ++i) single[i] = ann[i][a];
    best_single = std::max(best_single, accuracy(single, truth));
  }
  CHECK(accuracy(r.fused, truth) > best_single);
}

TEST_CASE("staple isolates an adversarial annotator") {
  Rng rng(10);
  std::vector<TransitionMatrix> conf(4, symmetric_transition(3, 0.1));
  conf.push_back(symmetric_transition(3, 0.8));
  Labels truth;
  const auto ann = simulate(conf, 3000, 3, rng, truth);
  const auto r = staple(ann, 3);
  for (std::size_t a = 0; a < 4; ++a) CHECK(diag_mean(r.model.confusions[a]) > 0.8);
  CHECK(diag_mean(r.model.confusions[4]) < 0.5);
}

TEST_CASE("property: staple posteriors are distributions and the objective never drops") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const std::size_t a = 2 + rng.below(4);
    std::vector<TransitionMatrix> conf;
    for (std::size_t i = 0; i < a; ++i) conf.emplace_back(nlab::test::random_stochastic(k, rng, 0.3));
    Labels truth;
    const auto ann = simulate(conf, 50 + rng.below(400), k, rng, truth);
    const auto r = staple(ann, k, {30, 0.0, 0.8, 1e-9});
    for (std::size_t i = 0; i < ann.size(); ++i) CHECK(is_prob_vector(r.posteriors.row(i)));
    CHECK(is_prob_vector(r.model.prior));
    for (std::size_t t = 1; t < r.log_likelihood.size(); ++t)
      CHECK(r.log_likelihood[t] >= r.log_likelihood[t - 1] - 1e-9);
  }
}

TEST_CASE("staple validates its input") {
  const std::vector<Labels> one{{0}, {1}};
  CHECK(error_kind([&] { staple(one, 2); }) == ErrorKind::invalid_input);
  CHECK(error_kind([] { staple({}, 2); }) == ErrorKind::invalid_input);
  const std::vector<Labels> out_of_range{{0, 3}};
  CHECK(error_kind([&] { staple(out_of_range, 2); }) == ErrorKind::invalid_input);
}

TEST_CASE("annotator model json shape") {
  AnnotatorModel m{{symmetric_transition(2, 0.1)}, {0.4, 0.6}};
  const nlohmann::json j = m;
  CHECK(j.at("prior")[1] == 0.6);
  CHECK(j.at("confusions")[0][0][1] == doctest::Approx(0.1));
  const auto back = j.get<AnnotatorModel>();
  CHECK(back.confusions[0] == m.confusions[0]);
}

TEST_CASE("min_loss_label examples") {
  const Labels labels{4, 5, 6};
  const auto c = min_loss_label(std::vector<double>{0.2, 0.5, 0.1}, labels);
  CHECK(c.annotator == 2);
  CHECK(c.label == 6);
  CHECK(min_loss_label(std::vector<double>{0.3, 0.3, 0.3}, labels).annotator == 0);
  CHECK(min_loss_label(std::vector<double>{7.0}, Labels{1}).annotator == 0);
  CHECK(error_kind([&] { min_loss_label(std::vector<double>{NAN, 1.0, 2.0}, labels); }) ==
        ErrorKind::invalid_input);
}

TEST_CASE("train_with_confusion needs annotator labels") {
  const auto ds = gen_blobs({2, 10, 2, 8.0, 1}).training_view();
  CHECK(error_kind([&] { train_with_confusion(ds, TrainConfig{}); }) == ErrorKind::invalid_input);
  CHECK(error_kind([&] { train_min_loss(ds, TrainConfig{}); }) == ErrorKind::invalid_input);
}

TEST_CASE("train_with_confusion recovers annotator confusions") {
  // Oracle run at N = 3000 with three annotators of distinct structure.
  const auto clean = gen_blobs({3, 1000, 2, 6.0, 13});
  const std::vector<TransitionMatrix> conf{
      symmetric_transition(3, 0.2),
      TransitionMatrix::from_rows({{0.7, 0.3, 0.0}, {0.0, 0.7, 0.3}, {0.3, 0.0, 0.7}}),
      symmetric_transition(3, 0.4)};
  Rng rng(13);
  const auto ds = simulate_annotators(clean, conf, rng);
  const auto [train_set, test_set] = split(ds, 0.2, 14);

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 15;
  const ConfusionTrainOptions opt{0.01, 0.9};
  const auto r = train_with_confusion(train_set.training_view(), cfg, opt, &test_set);

  CHECK(r.initial_trace_penalty == doctest::Approx(0.01 * 3 * 3 * 0.9));
  double err = 0;
  for (std::size_t a = 0; a < conf.size(); ++a) {
    const auto& est = r.model.confusions[a];
    for (int c = 0; c < 3; ++c) CHECK(is_prob_vector(est.row(static_cast<std::size_t>(c))));
    err += mean_row_l1(est, conf[a]);
  }
  err /= static_cast<double>(conf.size());
  MESSAGE("mean row l1 error " << err);
  CHECK(err < 0.1);

  const auto mv = with_labels(train_set.training_view(), majority_vote_all(*train_set.annotator_labels));
  const auto baseline = train(mv, cfg);
  const double acc = evaluate_accuracy(r.params, test_set);
  const double base_acc = evaluate_accuracy(baseline.params, test_set);
  MESSAGE("confusion-trained " << acc << " vs majority-vote " << base_acc);
  CHECK(acc >= base_acc);

  // Control: no trace penalty. Recorded only; the decomposition is ambiguous without it.
  const auto r0 = train_with_confusion(train_set.training_view(), cfg, {0.0, 0.9});
  CHECK(r0.initial_trace_penalty == 0.0);
  CHECK(r0.params.all_finite());
}

TEST_CASE("train_min_loss trains and is deterministic") {
  const auto clean = gen_blobs({2, 100, 2, 8.0, 3});
  Rng rng(4);
  const std::vector<TransitionMatrix> conf(3, symmetric_transition(2, 0.2));
  const auto ds = simulate_annotators(clean, conf, rng).training_view();
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto a = train_min_loss(ds, cfg);
  const auto b = train_min_loss(ds, cfg);
  CHECK(a.params == b.params);
  CHECK(evaluate_accuracy(a.params, clean) > 0.95);
}

}  // TEST_SUITE
