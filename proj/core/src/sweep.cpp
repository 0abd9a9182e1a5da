#include "nlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "nlab/io.hpp"
#include "nlab/numerics.hpp"

namespace nlab {

using nlohmann::json;

SweepSpec SweepSpec::from_json(const json& j) {
  require(j.is_object(), ErrorKind::config_validation, "sweep: top level must be an object");
  SweepSpec s;
  try {
    s.base = j.at("template");
    s.rhos = j.value("rhos", std::vector<double>{});
    for (const auto& m : j.value("methods", json::array())) {
      SweepMethod sm;
      sm.method = m.contains("method") ? m.at("method") : m;
      sm.name = m.value("name", std::string());
      s.methods.push_back(std::move(sm));
    }
    s.workers = j.value("workers", std::size_t{1});
    if (j.contains("output")) s.output = j.at("output").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config_validation, std::string("sweep: ") + e.what());
  }
  if (s.methods.empty() && j.contains("rhos")) s.methods.push_back({"", json::object()});
  s.validate();
  return s;
}

namespace {

json run_config(const SweepSpec& spec, double rho, const SweepMethod& m) {
  json c = spec.base;
  json noise{{"kind", "symmetric"}, {"rho", rho}};
  if (c.contains("noise") && c.at("noise").contains("seed")) noise["seed"] = c.at("noise").at("seed");
  c["noise"] = std::move(noise);
  c["method"] = m.method;
  c.erase("output");
  return c;
}

}  // namespace

void SweepSpec::validate() const {
  require(!rhos.empty() && !methods.empty(), ErrorKind::config_validation,
          "sweep: grid is empty (need at least one rho and one method)");
  require(workers >= 1, ErrorKind::config_validation, "sweep: workers must be >= 1");
  for (double r : rhos)
    require(r >= 0.0 && r < 1.0, ErrorKind::config_validation, "sweep: every rho must lie in [0, 1)");
  // Fail fast on a template that cannot parse at all.
  for (const auto& m : methods) (void)ExperimentConfig::from_json(run_config(*this, rhos.front(), m));
}

std::optional<QuadraticFit> quadratic_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), ErrorKind::shape, "quadratic_fit: x and y differ in length");
  if (std::set<double>(x.begin(), x.end()).size() < 3) return std::nullopt;
  Matrix normal(3, 3);
  std::vector<double> rhs(3, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double basis[3] = {1.0, x[i], x[i] * x[i]};
    for (std::size_t a = 0; a < 3; ++a) {
      rhs[a] += basis[a] * y[i];
      for (std::size_t b = 0; b < 3; ++b) normal(a, b) += basis[a] * basis[b];
    }
  }
  const auto c = solve(normal, rhs);
  QuadraticFit f{c[0], c[1], c[2], 0.0};
  double mean = 0.0;
  for (double v : y) mean += v / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = f.c0 + f.c1 * x[i] + f.c2 * x[i] * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

SweepResult run_sweep(const SweepSpec& spec) {
  spec.validate();
  SweepResult result;
  std::vector<json> configs;
  for (double rho : spec.rhos)
    for (const auto& m : spec.methods) {
      SweepRow row;
      row.run = result.rows.size();
      row.rho = rho;
      json c = run_config(spec, rho, m);
      row.method = m.name.empty() ? ExperimentConfig::from_json(c).pipeline() : m.name;
      result.rows.push_back(std::move(row));
      configs.push_back(std::move(c));
    }
  result.reports.resize(result.rows.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      SweepRow& row = result.rows[i];
      try {
        json c = configs[i];
        if (spec.output) {
          char name[32];
          std::snprintf(name, sizeof name, "run_%03zu.json", i);
          c["output"] = (*spec.output / name).string();
        }
        ExperimentReport r = run_experiment(ExperimentConfig::from_json(std::move(c)));
        row.metrics = r.final_metrics;
        row.ok = true;
        result.reports[i] = std::move(r);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  const std::size_t n = std::min(spec.workers, configs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  result.baseline = result.rows.front().method;
  for (const auto& r : result.rows)
    if (r.method == "loss:ce") result.baseline = r.method;
  std::vector<double> xs, ys;
  for (const auto& r : result.rows)
    if (r.ok && r.method == result.baseline) {
      xs.push_back(r.rho);
      ys.push_back(1.0 - r.metrics.accuracy);
    }
  result.fit = quadratic_fit(xs, ys);

  if (spec.output) {
    write_file_atomic(*spec.output / "summary.csv", result.summary_csv());
    write_file_atomic(*spec.output / "summary.json", result.summary_json().dump(2) + "\n");
  }
  return result;
}

std::string SweepResult::summary_csv() const {
  std::ostringstream os;
  os << "run,rho,method,status,accuracy,macro_f1,ece,test_error,error\n";
  for (const auto& r : rows) {
    os << r.run << ',' << format_double(r.rho) << ',' << r.method << ',' << (r.ok ? "ok" : "error") << ',';
    if (r.ok)
      os << format_double(r.metrics.accuracy) << ',' << format_double(r.metrics.macro_f1) << ','
         << format_double(r.metrics.ece) << ',' << format_double(1.0 - r.metrics.accuracy) << ',';
    else
      os << ",,,,";
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    os << (err.empty() ? "" : "\"" + err + "\"") << '\n';
  }
  return os.str();
}

json SweepResult::summary_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row{{"run", r.run}, {"rho", r.rho}, {"method", r.method}, {"status", r.ok ? "ok" : "error"}};
    if (r.ok) row["test_error"] = 1.0 - r.metrics.accuracy;
    else row["error"] = r.error;
    rows_json.push_back(std::move(row));
  }
  json fit_json = nullptr;
  if (fit) fit_json = {{"c0", fit->c0}, {"c1", fit->c1}, {"c2", fit->c2}, {"r2", fit->r2}};
  return {{"schema_version", kReportSchemaVersion},
          {"baseline", baseline},
          {"quadratic_fit", std::move(fit_json)},
          {"rows", std::move(rows_json)}};
}

}  // namespace nlab
