#include "nlab/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "nlab/rng.hpp"

namespace nlab {

std::size_t Arch::hidden_units() const {
  const auto h = static_cast<std::size_t>(std::llround(static_cast<double>(hidden) * capacity_scale));
  return std::max<std::size_t>(1, h);
}

void Arch::validate() const {
  require(dims >= 1, ErrorKind::invalid_parameter, "arch: input dimension must be >= 1");
  require(classes >= 2, ErrorKind::invalid_parameter, "arch: need at least two classes");
  if (kind == ArchKind::mlp) {
    require(hidden >= 1, ErrorKind::invalid_parameter, "arch: hidden width must be >= 1");
    require(capacity_scale > 0.0 && std::isfinite(capacity_scale), ErrorKind::invalid_parameter,
            "arch: capacity_scale must be positive");
  }
}

std::vector<std::span<double>> ModelParams::tensors() {
  std::vector<std::span<double>> out{w1.values(), b1.values()};
  if (arch.kind == ArchKind::mlp) {
    out.push_back(w2.values());
    out.push_back(b2.values());
  }
  if (noise_logits) out.push_back(noise_logits->values());
  return out;
}

std::vector<std::span<const double>> ModelParams::tensors() const {
  std::vector<std::span<const double>> out{w1.values(), b1.values()};
  if (arch.kind == ArchKind::mlp) {
    out.push_back(w2.values());
    out.push_back(b2.values());
  }
  if (noise_logits) out.push_back(noise_logits->values());
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors())
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  return {{"shape", {m.rows(), m.cols()}}, {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  require(shape.size() == 2, ErrorKind::parse, "matrix JSON: shape must have two entries");
  return Matrix(shape[0], shape[1], j.at("values").get<std::vector<double>>());
}

}  // namespace

void to_json(nlohmann::json& j, const ModelParams& p) {
  j = nlohmann::json{
      {"arch",
       {{"kind", p.arch.kind == ArchKind::linear ? "linear" : "mlp"},
        {"dims", p.arch.dims},
        {"classes", p.arch.classes},
        {"hidden", p.arch.hidden},
        {"capacity_scale", p.arch.capacity_scale}}},
      {"w1", matrix_json(p.w1)},
      {"b1", matrix_json(p.b1)},
  };
  if (p.arch.kind == ArchKind::mlp) {
    j["w2"] = matrix_json(p.w2);
    j["b2"] = matrix_json(p.b2);
  }
  if (p.noise_logits) j["noise_logits"] = matrix_json(*p.noise_logits);
}

void from_json(const nlohmann::json& j, ModelParams& p) {
  const auto& a = j.at("arch");
  const std::string kind = a.at("kind").get<std::string>();
  require(kind == "linear" || kind == "mlp", ErrorKind::parse, "model JSON: unknown arch kind");
  p.arch.kind = kind == "linear" ? ArchKind::linear : ArchKind::mlp;
  p.arch.dims = a.at("dims").get<std::size_t>();
  p.arch.classes = a.at("classes").get<std::size_t>();
  p.arch.hidden = a.value("hidden", kDefaultHidden);
  p.arch.capacity_scale = a.value("capacity_scale", 1.0);
  p.w1 = matrix_from(j.at("w1"));
  p.b1 = matrix_from(j.at("b1"));
  if (p.arch.kind == ArchKind::mlp) {
    p.w2 = matrix_from(j.at("w2"));
    p.b2 = matrix_from(j.at("b2"));
  }
  if (j.contains("noise_logits")) p.noise_logits = matrix_from(j.at("noise_logits"));
  const ModelParams shape = zeros_like(init(p.arch, 0));
  require(p.w1.rows() == shape.w1.rows() && p.w1.cols() == shape.w1.cols() &&
              p.b1.size() == shape.b1.size() && p.w2.size() == shape.w2.size() &&
              p.b2.size() == shape.b2.size(),
          ErrorKind::parse, "model JSON: tensor shapes do not match arch");
}

ModelParams init(const Arch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    Matrix w(fan_in, fan_out);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    return w;
  };
  ModelParams p;
  p.arch = arch;
  if (arch.kind == ArchKind::linear) {
    p.w1 = glorot(arch.dims, arch.classes);
    p.b1 = Matrix(1, arch.classes);
  } else {
    const std::size_t h = arch.hidden_units();
    p.w1 = glorot(arch.dims, h);
    p.b1 = Matrix(1, h);
    p.w2 = glorot(h, arch.classes);
    p.b2 = Matrix(1, arch.classes);
  }
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

void forward(const ModelParams& p, std::span<const double> x, ForwardCache& cache) {
  require(x.size() == p.arch.dims, ErrorKind::shape,
          "forward: input has " + std::to_string(x.size()) + " features, model expects " +
              std::to_string(p.arch.dims));
  const std::size_t first = p.w1.cols();
  auto affine = [](std::span<const double> in, const Matrix& w, const Matrix& b,
                   std::vector<double>& out) {
    out.assign(b.values().begin(), b.values().end());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double xi = in[i];
      if (xi == 0.0) continue;
      const auto wr = w.row(i);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += xi * wr[j];
    }
  };
  if (p.arch.kind == ArchKind::linear) {
    affine(x, p.w1, p.b1, cache.logits);
    return;
  }
  affine(x, p.w1, p.b1, cache.hidden_pre);
  cache.hidden.resize(first);
  for (std::size_t j = 0; j < first; ++j) cache.hidden[j] = std::max(0.0, cache.hidden_pre[j]);
  affine(cache.hidden, p.w2, p.b2, cache.logits);
}

std::vector<double> forward(const ModelParams& p, std::span<const double> x) {
  ForwardCache cache;
  forward(p, x, cache);
  return std::move(cache.logits);
}

ProbVector predict_proba(const ModelParams& p, std::span<const double> x) {
  return softmax(forward(p, x));
}

Label predict(const ModelParams& p, std::span<const double> x) {
  return static_cast<Label>(argmax(forward(p, x)));
}

std::vector<Label> predict_all(const ModelParams& p, const Matrix& features) {
  std::vector<Label> out(features.rows());
  ForwardCache cache;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    forward(p, features.row(i), cache);
    out[i] = static_cast<Label>(argmax(cache.logits));
  }
  return out;
}

Matrix predict_proba_all(const ModelParams& p, const Matrix& features) {
  Matrix out(features.rows(), p.arch.classes);
  ForwardCache cache;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    forward(p, features.row(i), cache);
    softmax_into(cache.logits, out.row(i));
  }
  return out;
}

void backward_accumulate(const ModelParams& p, std::span<const double> x, const ForwardCache& cache,
                         std::span<const double> g, double scale, ModelParams& grad) {
  require(g.size() == p.arch.classes, ErrorKind::shape, "backward: gradient length must equal K");
  auto outer_add = [scale](std::span<const double> in, std::span<const double> up, Matrix& w,
                           Matrix& b) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double xi = scale * in[i];
      if (xi == 0.0) continue;
      auto wr = w.row(i);
      for (std::size_t j = 0; j < up.size(); ++j) wr[j] += xi * up[j];
    }
    auto bv = b.values();
    for (std::size_t j = 0; j < up.size(); ++j) bv[j] += scale * up[j];
  };
  if (p.arch.kind == ArchKind::linear) {
    outer_add(x, g, grad.w1, grad.b1);
    return;
  }
  outer_add(cache.hidden, g, grad.w2, grad.b2);
  const std::size_t h = cache.hidden.size();
  std::vector<double> gh(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    if (cache.hidden_pre[j] <= 0.0) continue;  // relu subgradient 0 at 0
    gh[j] = dot(p.w2.row(j), g);
  }
  outer_add(x, gh, grad.w1, grad.b1);
}

ModelParams backward(const ModelParams& p, std::span<const double> x,
                     std::span<const double> grad_logits) {
  ForwardCache cache;
  forward(p, x, cache);
  ModelParams grad = zeros_like(p);
  backward_accumulate(p, x, cache, grad_logits, 1.0, grad);
  return grad;
}

void sgd_update(ModelParams& p, const ModelParams& grad, double learning_rate) {
  auto dst = p.tensors();
  const auto src = grad.tensors();
  require(dst.size() == src.size(), ErrorKind::shape, "sgd_update: gradient layout mismatch");
  for (std::size_t t = 0; t < dst.size(); ++t) {
    require(dst[t].size() == src[t].size(), ErrorKind::shape, "sgd_update: tensor size mismatch");
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] -= learning_rate * src[t][i];
  }
}

double grad_check(const ModelParams& p, std::span<const double> x, Label y, const LossSpec& loss,
                  double epsilon) {
  require(epsilon >= 1e-8 && epsilon <= 1e-4, ErrorKind::invalid_parameter,
          "grad_check: epsilon must lie in [1e-8, 1e-4]");
  ForwardCache cache;
  forward(p, x, cache);
  const LossEval at = evaluate(loss, softmax(cache.logits), y);
  ModelParams analytic = zeros_like(p);
  backward_accumulate(p, x, cache, at.grad_logits, 1.0, analytic);

  auto value_at = [&](const ModelParams& q) {
    return evaluate(loss, predict_proba(q, x), y).value;
  };
  ModelParams probe = p;
  probe.noise_logits.reset();
  analytic.noise_logits.reset();
  auto probe_tensors = probe.tensors();
  const auto analytic_tensors = analytic.tensors();
  double worst = 0.0;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    for (std::size_t i = 0; i < probe_tensors[t].size(); ++i) {
      const double saved = probe_tensors[t][i];
      probe_tensors[t][i] = saved + epsilon;
      const double up = value_at(probe);
      probe_tensors[t][i] = saved - epsilon;
      const double down = value_at(probe);
      probe_tensors[t][i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic_tensors[t][i];
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) softmax_into(logits.row(r), out.row(r));
  return out;
}

Matrix identity_leaning_logits(std::size_t k, double diag_prob) {
  require(k >= 2, ErrorKind::invalid_parameter, "identity_leaning_logits: K must be >= 2");
  require(diag_prob > 0.0 && diag_prob < 1.0, ErrorKind::invalid_parameter,
          "identity_leaning_logits: diag_prob must lie in (0, 1)");
  // softmax row [a, 0, ..., 0] has diagonal e^a / (e^a + K - 1).
  const double a = std::log(diag_prob * static_cast<double>(k - 1) / (1.0 - diag_prob));
  Matrix q(k, k);
  for (std::size_t i = 0; i < k; ++i) q(i, i) = a;
  return q;
}

ModelParams attach_noise_layer(ModelParams p, double diag_prob) {
  p.noise_logits = identity_leaning_logits(p.arch.classes, diag_prob);
  return p;
}

Matrix realized_transition(const ModelParams& p) {
  require(p.noise_logits.has_value(), ErrorKind::invalid_input, "model has no noise layer");
  return row_softmax(*p.noise_logits);
}

ProbVector noisy_forward(const ModelParams& p, std::span<const double> x) {
  const ProbVector probs = predict_proba(p, x);
  if (!p.noise_logits) return probs;
  const Matrix a = realized_transition(p);
  ProbVector q(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i)
    for (std::size_t j = 0; j < probs.size(); ++j) q[j] += a(i, j) * probs[i];
  return q;
}

MixingEval mixing_ce(const Matrix& a, std::span<const double> probs, Label y) {
  const std::size_t k = probs.size();
  require(a.rows() == k && a.cols() == k, ErrorKind::shape, "mixing_ce: class count mismatch");
  require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorKind::invalid_input,
          "mixing_ce: label outside [0, K)");
  const auto yi = static_cast<std::size_t>(y);
  double qy = 0.0;
  for (std::size_t i = 0; i < k; ++i) qy += a(i, yi) * probs[i];
  MixingEval out;
  out.value = -std::log(std::max(qy, kLogClamp));
  out.grad_logits.assign(k, 0.0);
  out.grad_mix_logits = Matrix(k, k);
  if (qy < kLogClamp) return out;
  for (std::size_t m = 0; m < k; ++m) out.grad_logits[m] = probs[m] - a(m, yi) * probs[m] / qy;
  // dL/dQ[i][m] = (p_i / q_y) A[i][m] (A[i][y] - [m == y])
  for (std::size_t i = 0; i < k; ++i) {
    const double f = probs[i] / qy;
    for (std::size_t m = 0; m < k; ++m)
      out.grad_mix_logits(i, m) = f * a(i, m) * (a(i, yi) - (m == yi ? 1.0 : 0.0));
  }
  return out;
}

double ensemble_disagreement(std::span<const ModelParams> models, std::span<const double> x) {
  require(models.size() >= 2, ErrorKind::invalid_parameter,
          "ensemble_disagreement: need at least two models");
  const std::size_t k = models.front().arch.classes;
  std::vector<std::size_t> votes(k, 0);
  for (const auto& m : models) {
    require(m.arch.classes == k, ErrorKind::shape, "ensemble_disagreement: class counts differ");
    ++votes[static_cast<std::size_t>(predict(m, x))];
  }
  const std::size_t top = *std::max_element(votes.begin(), votes.end());
  return 1.0 - static_cast<double>(top) / static_cast<double>(models.size());
}

}  // namespace nlab
