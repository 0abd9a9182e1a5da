#include "nlab/losses.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nlab {

namespace {

std::size_t index_of(Label y, std::size_t k) {
  require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorKind::invalid_input,
          "loss: label outside [0, K)");
  return static_cast<std::size_t>(y);
}

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

// d(-log p_j)/dz with the clamp honoured: zero where the clamp is active.
void add_neg_log_grad(std::span<const double> probs, std::size_t j, double weight,
                      std::vector<double>& grad) {
  if (probs[j] < kLogClamp) return;
  for (std::size_t m = 0; m < probs.size(); ++m) grad[m] += weight * probs[m];
  grad[j] -= weight;
}

}  // namespace

BackwardCorrected::BackwardCorrected(BaseLoss base, TransitionMatrix t)
    : base_(base), t_(std::move(t)) {
  const double cond = condition_number(t_.matrix());
  if (!(cond < kMaxConditionNumber)) {
    std::ostringstream msg;
    msg << "backward correction: transition is ill-conditioned (condition number " << cond
        << ", limit " << kMaxConditionNumber << ")";
    fail(ErrorKind::singular_matrix, msg.str());
  }
  t_inv_ = nlab::inverse(t_.matrix());
}

std::string loss_name(const LossSpec& spec) {
  struct Visitor {
    std::string operator()(const CrossEntropy&) const { return "ce"; }
    std::string operator()(const Mae&) const { return "mae"; }
    std::string operator()(const Imae&) const { return "imae"; }
    std::string operator()(const SmoothKl&) const { return "smooth_kl"; }
    std::string operator()(const BackwardCorrected&) const { return "backward"; }
    std::string operator()(const ForwardCorrected&) const { return "forward"; }
  };
  return std::visit(Visitor{}, spec);
}

void validate(const LossSpec& spec, int k) {
  if (const auto* i = std::get_if<Imae>(&spec))
    require(i->tau > 0.0, ErrorKind::invalid_parameter, "imae: tau must be positive");
  if (const auto* s = std::get_if<SmoothKl>(&spec))
    require(s->epsilon >= 0.0 && s->epsilon < 1.0, ErrorKind::invalid_parameter,
            "smooth_kl: epsilon must lie in [0, 1)");
  if (const auto* b = std::get_if<BackwardCorrected>(&spec))
    require(b->transition().k() == k, ErrorKind::invalid_parameter,
            "backward correction: transition class count differs from dataset");
  if (const auto* f = std::get_if<ForwardCorrected>(&spec))
    require(f->t.k() == k, ErrorKind::invalid_parameter,
            "forward correction: transition class count differs from dataset");
}

void to_json(nlohmann::json& j, const LossSpec& spec) {
  j = nlohmann::json{{"kind", loss_name(spec)}};
  if (const auto* i = std::get_if<Imae>(&spec)) j["tau"] = i->tau;
  if (const auto* s = std::get_if<SmoothKl>(&spec)) j["epsilon"] = s->epsilon;
  if (const auto* b = std::get_if<BackwardCorrected>(&spec)) {
    j["base"] = b->base() == BaseLoss::ce ? "ce" : "mae";
    j["transition"] = b->transition();
  }
  if (const auto* f = std::get_if<ForwardCorrected>(&spec)) j["transition"] = f->t;
}

LossSpec loss_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ce") return CrossEntropy{};
  if (kind == "mae") return Mae{};
  if (kind == "imae") return Imae{j.value("tau", 8.0)};
  if (kind == "smooth_kl") return SmoothKl{j.value("epsilon", 0.1)};
  if (kind == "backward") {
    const std::string base = j.value("base", std::string("ce"));
    require(base == "ce" || base == "mae", ErrorKind::config_validation,
            "backward correction: base must be 'ce' or 'mae'");
    return BackwardCorrected(base == "ce" ? BaseLoss::ce : BaseLoss::mae,
                             j.at("transition").get<TransitionMatrix>());
  }
  if (kind == "forward") return ForwardCorrected{j.at("transition").get<TransitionMatrix>()};
  fail(ErrorKind::config_validation, "unknown loss kind '" + kind + "'");
}

double ce(std::span<const double> probs, Label y) {
  return -clamped_log(probs[index_of(y, probs.size())]);
}

std::vector<double> ce_grad_logits(std::span<const double> probs, Label y) {
  std::vector<double> g(probs.begin(), probs.end());
  g[index_of(y, probs.size())] -= 1.0;
  return g;
}

double mae(std::span<const double> probs, Label y) {
  const std::size_t t = index_of(y, probs.size());
  double s = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) s += std::abs((j == t ? 1.0 : 0.0) - probs[j]);
  return s;
}

std::vector<double> mae_grad_logits(std::span<const double> probs, Label y) {
  const std::size_t t = index_of(y, probs.size());
  // d(2 - 2 p_y)/dz = -2 p_y (e_y - p)
  const double py = probs[t];
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = -2.0 * py * ((j == t ? 1.0 : 0.0) - probs[j]);
  return g;
}

std::vector<double> imae_grad_logits(std::span<const double> probs, Label y, double tau) {
  require(tau > 0.0, ErrorKind::invalid_parameter, "imae: tau must be positive");
  const std::size_t t = index_of(y, probs.size());
  const double scale = -0.5 * std::exp(tau * probs[t]);
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = scale * ((j == t ? 1.0 : 0.0) - probs[j]);
  return g;
}

double imae_value(std::span<const double> probs, Label y, double tau) {
  require(tau > 0.0, ErrorKind::invalid_parameter, "imae: tau must be positive");
  const double py = std::max(probs[index_of(y, probs.size())], kLogClamp);
  return 0.5 * (std::expint(tau) - std::expint(tau * py));
}

ProbVector smoothed_label(int k, Label y, double epsilon) {
  const auto n = static_cast<std::size_t>(k);
  ProbVector q(n, epsilon / static_cast<double>(k));
  q[index_of(y, n)] += 1.0 - epsilon;
  return q;
}

double kl_to_target(std::span<const double> probs, std::span<const double> target) {
  require(probs.size() == target.size(), ErrorKind::shape, "kl: length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j)
    if (target[j] > 0.0) s += target[j] * (std::log(target[j]) - clamped_log(probs[j]));
  return s;
}

std::vector<double> kl_grad_logits(std::span<const double> probs, std::span<const double> target) {
  require(probs.size() == target.size(), ErrorKind::shape, "kl: length mismatch");
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = probs[j] - target[j];
  return g;
}

double smooth_kl(std::span<const double> probs, Label y, double epsilon) {
  require(epsilon >= 0.0 && epsilon < 1.0, ErrorKind::invalid_parameter,
          "smooth_kl: epsilon must lie in [0, 1)");
  const ProbVector q = smoothed_label(static_cast<int>(probs.size()), y, epsilon);
  return kl_to_target(probs, q);
}

std::vector<double> loss_vector(BaseLoss base, std::span<const double> probs) {
  std::vector<double> l(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j)
    l[j] = base == BaseLoss::ce ? -clamped_log(probs[j]) : 2.0 * (1.0 - probs[j]);
  return l;
}

double backward_corrected(const BackwardCorrected& spec, std::span<const double> probs,
                          Label observed) {
  const std::size_t y = index_of(observed, probs.size());
  require(static_cast<std::size_t>(spec.transition().k()) == probs.size(), ErrorKind::shape,
          "backward correction: class count mismatch");
  return dot(spec.inverse().row(y), loss_vector(spec.base(), probs));
}

double backward_corrected(const TransitionMatrix& t, std::span<const double> probs, Label observed,
                          BaseLoss base) {
  return backward_corrected(BackwardCorrected(base, t), probs, observed);
}

std::vector<double> backward_corrected_grad_logits(const BackwardCorrected& spec,
                                                   std::span<const double> probs, Label observed) {
  const std::size_t y = index_of(observed, probs.size());
  const auto w = spec.inverse().row(y);
  std::vector<double> g(probs.size(), 0.0);
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (w[j] == 0.0) continue;
    if (spec.base() == BaseLoss::ce) {
      add_neg_log_grad(probs, j, w[j], g);
    } else {
      const auto gj = mae_grad_logits(probs, static_cast<Label>(j));
      for (std::size_t m = 0; m < probs.size(); ++m) g[m] += w[j] * gj[m];
    }
  }
  return g;
}

ProbVector forward_mix(const TransitionMatrix& t, std::span<const double> probs) {
  require(static_cast<std::size_t>(t.k()) == probs.size(), ErrorKind::shape,
          "forward correction: class count mismatch");
  ProbVector q(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i)
    for (std::size_t j = 0; j < probs.size(); ++j) q[j] += t(i, j) * probs[i];
  return q;
}

double forward_corrected(const TransitionMatrix& t, std::span<const double> probs, Label observed) {
  const ProbVector q = forward_mix(t, probs);
  return -clamped_log(q[index_of(observed, q.size())]);
}

std::vector<double> forward_corrected_grad_logits(const TransitionMatrix& t,
                                                  std::span<const double> probs, Label observed) {
  const ProbVector q = forward_mix(t, probs);
  const std::size_t y = index_of(observed, q.size());
  std::vector<double> g(probs.size(), 0.0);
  if (q[y] < kLogClamp) return g;
  // d(-log q_y)/dz_k = p_k - T[k][y] p_k / q_y
  for (std::size_t k = 0; k < probs.size(); ++k) g[k] = probs[k] - t(k, y) * probs[k] / q[y];
  return g;
}

LossEval evaluate(const LossSpec& spec, std::span<const double> probs, Label y) {
  struct Visitor {
    std::span<const double> p;
    Label y;
    LossEval operator()(const CrossEntropy&) const {
      return {ce(p, y), ce_grad_logits(p, y)};
    }
    LossEval operator()(const Mae&) const { return {mae(p, y), mae_grad_logits(p, y)}; }
    LossEval operator()(const Imae& s) const {
      return {imae_value(p, y, s.tau), imae_grad_logits(p, y, s.tau)};
    }
    LossEval operator()(const SmoothKl& s) const {
      const ProbVector q = smoothed_label(static_cast<int>(p.size()), y, s.epsilon);
      return {kl_to_target(p, q), kl_grad_logits(p, q)};
    }
    LossEval operator()(const BackwardCorrected& s) const {
      return {backward_corrected(s, p, y), backward_corrected_grad_logits(s, p, y)};
    }
    LossEval operator()(const ForwardCorrected& s) const {
      return {forward_corrected(s.t, p, y), forward_corrected_grad_logits(s.t, p, y)};
    }
  };
  index_of(y, probs.size());
  return std::visit(Visitor{probs, y}, spec);
}

}  // namespace nlab
