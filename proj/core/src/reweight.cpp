#include "nlab/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

namespace nlab {

RunningLossFilter::RunningLossFilter(RunningFilterParams params) : params_(params) {
  require(params_.window >= 1, ErrorKind::invalid_parameter, "running filter: window must be >= 1");
  require(params_.multiplier > 0.0, ErrorKind::invalid_parameter,
          "running filter: multiplier must be positive");
  ring_.assign(params_.window, 0.0);
}

double RunningLossFilter::mean() const noexcept {
  if (count_ == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < count_; ++i) s += ring_[i];
  return s / static_cast<double>(count_);
}

double RunningLossFilter::stddev() const noexcept {
  if (count_ == 0) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (std::size_t i = 0; i < count_; ++i) s += (ring_[i] - m) * (ring_[i] - m);
  return std::sqrt(s / static_cast<double>(count_));
}

void RunningLossFilter::push(double loss) {
  ring_[head_] = loss;
  head_ = (head_ + 1) % ring_.size();
  count_ = std::min(count_ + 1, ring_.size());
}

FilterDecision RunningLossFilter::observe(double loss) {
  require(std::isfinite(loss), ErrorKind::invalid_input, "running filter: non-finite loss");
  FilterDecision d = FilterDecision::update;
  if (count_ >= params_.warmup) {
    const double sigma = stddev();
    if (sigma > params_.sigma_floor && loss > mean() + params_.multiplier * sigma)
      d = FilterDecision::skip;
  }
  if (d == FilterDecision::update || params_.include_skipped) push(loss);
  return d;
}

std::vector<std::size_t> rank_prune(std::span<const double> confidence, std::span<const Label> labels,
                                    double prune_fraction, bool per_class) {
  require(confidence.size() == labels.size(), ErrorKind::shape,
          "rank_prune: confidences and labels differ in length");
  require(prune_fraction >= 0.0 && prune_fraction < 1.0, ErrorKind::invalid_parameter,
          "rank_prune: fraction must lie in [0, 1)");
  std::map<Label, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[per_class ? labels[i] : 0].push_back(i);
  std::vector<bool> removed(labels.size(), false);
  for (auto& [label, members] : groups) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return confidence[a] != confidence[b] ? confidence[a] < confidence[b] : a < b;
    });
    const auto drop = static_cast<std::size_t>(
        std::floor(prune_fraction * static_cast<double>(members.size())));
    for (std::size_t r = 0; r < drop; ++r) removed[members[r]] = true;
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!removed[i]) kept.push_back(i);
  return kept;
}

std::vector<std::size_t> trimmed_filter(std::span<const double> losses, double trim_fraction) {
  require(trim_fraction >= 0.0 && trim_fraction < 1.0, ErrorKind::invalid_parameter,
          "trimmed_filter: fraction must lie in [0, 1)");
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return losses[a] != losses[b] ? losses[a] > losses[b] : a > b;
  });
  const auto drop = static_cast<std::size_t>(
      std::ceil(trim_fraction * static_cast<double>(losses.size())));
  std::vector<bool> removed(losses.size(), false);
  for (std::size_t r = 0; r < drop && r < order.size(); ++r) removed[order[r]] = true;
  std::vector<std::size_t> kept;
  kept.reserve(losses.size() - std::min(drop, losses.size()));
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (!removed[i]) kept.push_back(i);
  return kept;
}

double pumpout(const BackwardCorrected& correction, std::span<const double> probs, Label observed,
               double gamma) {
  require(gamma > 0.0 && gamma < 1.0, ErrorKind::invalid_parameter,
          "pumpout: gamma must lie in (0, 1)");
  require(observed >= 0 && static_cast<std::size_t>(observed) < probs.size(),
          ErrorKind::invalid_input, "pumpout: label outside [0, K)");
  const std::vector<double> l = loss_vector(correction.base(), probs);
  const Matrix& inv = correction.inverse();
  double total = 0.0;
  for (std::size_t i = 0; i < inv.rows(); ++i) total += dot(inv.row(i), l);
  return total < 0.0 ? -gamma : 1.0;
}

double pumpout(const TransitionMatrix& t, BaseLoss base, std::span<const double> probs,
               Label observed, double gamma) {
  return pumpout(BackwardCorrected(base, t), probs, observed, gamma);
}

void to_json(nlohmann::json& j, const ReweightSpec& spec) {
  if (const auto* r = std::get_if<RunningFilterSpec>(&spec)) {
    j = {{"kind", "running"},
         {"window", r->params.window},
         {"multiplier", r->params.multiplier},
         {"warmup", r->params.warmup},
         {"include_skipped", r->params.include_skipped}};
  } else if (const auto* p = std::get_if<RankPruneSpec>(&spec)) {
    j = {{"kind", "rank_prune"},
         {"fraction", p->fraction},
         {"per_class", p->per_class},
         {"warmup_epochs", p->warmup_epochs}};
  } else if (const auto* t = std::get_if<TrimmedSpec>(&spec)) {
    j = {{"kind", "trimmed"}, {"fraction", t->fraction}, {"warmup_epochs", t->warmup_epochs}};
  } else {
    const auto& u = std::get<PumpoutSpec>(spec);
    j = {{"kind", "pumpout"}, {"gamma", u.gamma}, {"base", u.base == BaseLoss::ce ? "ce" : "mae"}};
    if (u.transition) j["transition"] = *u.transition;
  }
}

ReweightSpec reweight_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "running") {
    RunningFilterParams p;
    p.window = j.value("window", p.window);
    p.multiplier = j.value("multiplier", p.multiplier);
    p.warmup = j.value("warmup", p.warmup);
    p.include_skipped = j.value("include_skipped", p.include_skipped);
    return RunningFilterSpec{p};
  }
  if (kind == "rank_prune")
    return RankPruneSpec{j.value("fraction", 0.3), j.value("per_class", true),
                         j.value("warmup_epochs", std::size_t{5})};
  if (kind == "trimmed")
    return TrimmedSpec{j.value("fraction", 0.3), j.value("warmup_epochs", std::size_t{5})};
  if (kind == "pumpout") {
    PumpoutSpec p;
    p.gamma = j.value("gamma", p.gamma);
    p.base = j.value("base", std::string("ce")) == "mae" ? BaseLoss::mae : BaseLoss::ce;
    if (j.contains("transition") && j.at("transition").is_object())
      p.transition = j.at("transition").get<TransitionMatrix>();
    return p;
  }
  fail(ErrorKind::config_validation, "unknown reweight kind '" + kind + "'");
}

void validate(const ReweightSpec& spec) {
  if (const auto* r = std::get_if<RunningFilterSpec>(&spec))
    require(r->params.window >= 1 && r->params.multiplier > 0.0, ErrorKind::invalid_parameter,
            "running filter: need window >= 1 and multiplier > 0");
  if (const auto* p = std::get_if<RankPruneSpec>(&spec))
    require(p->fraction >= 0.0 && p->fraction < 1.0, ErrorKind::invalid_parameter,
            "rank_prune: fraction must lie in [0, 1)");
  if (const auto* t = std::get_if<TrimmedSpec>(&spec))
    require(t->fraction >= 0.0 && t->fraction < 1.0, ErrorKind::invalid_parameter,
            "trimmed: fraction must lie in [0, 1)");
  if (const auto* u = std::get_if<PumpoutSpec>(&spec))
    require(u->gamma > 0.0 && u->gamma < 1.0, ErrorKind::invalid_parameter,
            "pumpout: gamma must lie in (0, 1)");
}

TrainHooks make_hooks(const ReweightSpec& spec) {
  validate(spec);
  TrainHooks hooks;
  if (const auto* r = std::get_if<RunningFilterSpec>(&spec)) {
    auto filter = std::make_shared<RunningLossFilter>(r->params);
    hooks.sample_weight = [filter](double loss, std::span<const double>, Label) {
      return filter->observe(loss) == FilterDecision::skip ? 0.0 : 1.0;
    };
  } else if (const auto* p = std::get_if<RankPruneSpec>(&spec)) {
    hooks.select = [p = *p](const EpochContext& ctx) {
      std::vector<std::size_t> all(ctx.data.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      if (ctx.epoch < p.warmup_epochs) return all;
      std::vector<double> conf(ctx.data.size());
      for (std::size_t i = 0; i < conf.size(); ++i)
        conf[i] = ctx.probs(i, static_cast<std::size_t>(ctx.data.labels[i]));
      return rank_prune(conf, ctx.data.labels, p.fraction, p.per_class);
    };
  } else if (const auto* t = std::get_if<TrimmedSpec>(&spec)) {
    hooks.select = [t = *t](const EpochContext& ctx) {
      if (ctx.epoch < t.warmup_epochs) {
        std::vector<std::size_t> all(ctx.data.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
      }
      return trimmed_filter(ctx.losses, t.fraction);
    };
  } else {
    const auto& u = std::get<PumpoutSpec>(spec);
    require(u.transition.has_value(), ErrorKind::config_validation,
            "pumpout: transition matrix not resolved");
    auto correction = std::make_shared<const BackwardCorrected>(u.base, *u.transition);
    hooks.sample_weight = [correction, gamma = u.gamma](double, std::span<const double> probs,
                                                         Label y) {
      return pumpout(*correction, probs, y, gamma);
    };
  }
  return hooks;
}

}  // namespace nlab
