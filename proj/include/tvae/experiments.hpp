#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tvae/baselines.hpp"
#include "tvae/data.hpp"
#include "tvae/metrics.hpp"
#include "tvae/train.hpp"

namespace tvae {

/// Runs fn(0..n-1) on up to `threads` workers. Each index must own its state.
/// The first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Metrics present in a report, in a fixed order.
inline std::vector<std::pair<std::string, double>> metric_entries(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> out;
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) out.emplace_back(k, *v);
  };
  put("auroc_assignment", r.auroc_assignment);
  put("auprc_assignment", r.auprc_assignment);
  put("auroc_response", r.auroc_response);
  put("auprc_response", r.auprc_response);
  put("rpehe", r.rpehe);
  put("ate_error", r.ate_error);
  return out;
}

struct Summary {
  std::size_t count = 0;
  double mean = std::nan("");
  double stderr_ = std::nan("");  // sample stdev / sqrt(count); NaN below two values
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = 0.0;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return s;
}

inline nlohmann::json to_json(const Summary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"count", s.count}, {"mean", num(s.mean)}, {"stderr", num(s.stderr_)}};
}

// ---------------------------------------------------------------------------
// cross-validation

struct FoldRun {
  std::size_t fold = 0;
  MetricsReport metrics;
  std::optional<LatentDiagnostics> diagnostics;
  std::optional<RunManifest> manifest;
};

struct CrossValidation {
  std::string fold_fingerprint;
  std::vector<FoldRun> runs;

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> out;
    for (const FoldRun& r : runs)
      for (const auto& [k, v] : metric_entries(r.metrics))
        if (k == metric) out.push_back(v);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json folds = nlohmann::json::array();
    std::map<std::string, std::vector<double>> by_metric;
    for (const FoldRun& r : runs) {
      nlohmann::json f = {{"fold", r.fold}, {"metrics", r.metrics.to_json()}};
      if (r.diagnostics) f["latent_diagnostics_csv"] = r.diagnostics->to_csv();
      folds.push_back(f);
      for (const auto& [k, v] : metric_entries(r.metrics)) by_metric[k].push_back(v);
    }
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [k, v] : by_metric) summary[k] = tvae::to_json(summarize(v));
    return {{"fold_fingerprint", fold_fingerprint}, {"folds", folds}, {"summary", summary}};
  }
};

struct CvOptions {
  std::size_t k = 5;
  std::size_t folds_used = 0;  // 0 runs every fold
  bool diagnostics = false;
  std::size_t threads = 1;
};

/// Stratified k-fold evaluation of TVAE. Folds come from the config seed, so
/// any two configs with the same seed see the same folds.
inline CrossValidation cross_validate(const Dataset& data, const TrainConfig& cfg, const CvOptions& opt) {
  const std::vector<Fold> folds = stratified_kfold(data, opt.k, derive_seed(cfg.seed, SeedPurpose::folds));
  CrossValidation cv;
  cv.fold_fingerprint = fold_fingerprint(folds);
  const std::size_t used = opt.folds_used == 0 ? folds.size() : std::min(opt.folds_used, folds.size());
  cv.runs.resize(used);
  parallel_for(used, opt.threads, [&](std::size_t f) {
    const Dataset test = data.subset(folds[f].test);
    TrainResult r = train(data.subset(folds[f].train), cfg);
    FoldRun& run = cv.runs[f];
    run.fold = f;
    run.metrics = evaluate(r.model, test);
    run.metrics.fold = std::to_string(f);
    if (opt.diagnostics) run.diagnostics = latent_diagnostics(r.model, standardized(test, r.model.standardization));
    r.manifest.metrics = run.metrics;
    run.manifest = std::move(r.manifest);
  });
  return cv;
}

// ---------------------------------------------------------------------------
// benchmark

inline const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> m{"tvae", "ols_s", "ols_t", "knn"};
  return m;
}

struct BenchmarkRun {
  std::size_t replication = 0;
  std::string method;
  MetricsReport metrics;
};

struct BenchmarkFailure {
  std::size_t replication = 0;
  std::string method;
  std::string message;
};

struct BenchmarkReport {
  std::vector<BenchmarkRun> runs;
  std::vector<BenchmarkFailure> failures;
  std::vector<std::string> fold_fingerprints;  // per replication; folds come from the config seed

  std::vector<double> values(const std::string& method, const std::string& metric) const {
    std::vector<double> out;
    for (const BenchmarkRun& r : runs)
      if (r.method == method)
        for (const auto& [k, v] : metric_entries(r.metrics))
          if (k == metric) out.push_back(v);
    return out;
  }

  Summary summary(const std::string& method, const std::string& metric) const { return summarize(values(method, metric)); }

  nlohmann::json to_json() const {
    nlohmann::json summary = nlohmann::json::object();
    std::map<std::string, std::map<std::string, std::vector<double>>> grouped;
    for (const BenchmarkRun& r : runs)
      for (const auto& [k, v] : metric_entries(r.metrics)) grouped[r.method][k].push_back(v);
    for (const auto& [method, metrics] : grouped)
      for (const auto& [k, v] : metrics) summary[method][k] = tvae::to_json(summarize(v));
    nlohmann::json per_run = nlohmann::json::array();
    for (const BenchmarkRun& r : runs)
      per_run.push_back({{"replication", r.replication}, {"method", r.method}, {"metrics", r.metrics.to_json()}});
    nlohmann::json failed = nlohmann::json::array();
    for (const BenchmarkFailure& f : failures)
      failed.push_back({{"replication", f.replication}, {"method", f.method}, {"message", f.message}});
    return {{"summary", summary}, {"runs", per_run}, {"failures", failed}, {"fold_fingerprints", fold_fingerprints}};
  }
};

struct BenchmarkOptions {
  std::size_t k = 10;  // the first fold of a stratified k-fold split is the test set
  std::vector<std::string> methods = benchmark_methods();
  std::size_t knn_k = 5;
  std::size_t threads = 1;
};

/// Fits a baseline (`ols_s`, `ols_t` or `knn`) on raw training rows and
/// predicts raw query covariates. Covariates are standardized with training
/// statistics; outcomes stay on their own scale.
inline std::vector<Prediction> baseline_predict(const std::string& method, const Dataset& train_rows,
                                                const Tensor& query, std::size_t knn_k = 5) {
  const Standardization s = fit_standardization(train_rows.x, train_rows.features);
  const Dataset tr = standardized(train_rows, s);
  const Tensor xq = s.apply(query);
  if (method == "ols_s") return OlsS::fit(tr).predict(xq);
  if (method == "ols_t") return OlsT::fit(tr).predict(xq);
  if (method == "knn") return Knn::fit(tr, knn_k).predict(xq);
  throw ConfigError("unknown baseline '" + method + "' (expected ols_s|ols_t|knn)");
}

namespace detail {

inline MetricsReport run_method(const std::string& method, const Dataset& train_rows, const Dataset& test,
                                const TrainConfig& cfg, std::size_t knn_k) {
  if (method == "tvae") return evaluate(train(train_rows, cfg).model, test);
  return metrics_from_predictions(baseline_predict(method, train_rows, test.x, knn_k), test, cfg.outcome);
}

}  // namespace detail

/// Train/test evaluation of every method on each replication. A failing
/// method or replication is recorded and excluded from the summaries.
inline BenchmarkReport run_benchmark(const std::vector<std::function<Dataset()>>& replications, const TrainConfig& cfg,
                                     const BenchmarkOptions& opt) {
  if (replications.size() < 2 && opt.k < 2) throw ConfigError("benchmark needs >= 2 replications or k >= 2");
  for (const std::string& m : opt.methods)
    if (std::find(benchmark_methods().begin(), benchmark_methods().end(), m) == benchmark_methods().end()) {
      throw ConfigError("unknown benchmark method '" + m + "'");
    }
  const std::size_t n = replications.size();
  std::vector<std::vector<BenchmarkRun>> runs(n);
  std::vector<std::vector<BenchmarkFailure>> failures(n);
  std::vector<std::string> prints(n);
  parallel_for(n, opt.threads, [&](std::size_t r) {
    Dataset data;
    std::vector<Fold> folds;
    try {
      data = replications[r]();
      folds = stratified_kfold(data, opt.k, derive_seed(cfg.seed, SeedPurpose::folds));
    } catch (const Error& e) {
      failures[r].push_back({r, "data", e.what()});
      return;
    }
    prints[r] = fold_fingerprint(folds);
    const Dataset train_rows = data.subset(folds[0].train), test = data.subset(folds[0].test);
    for (const std::string& m : opt.methods) {
      try {
        runs[r].push_back({r, m, detail::run_method(m, train_rows, test, cfg, opt.knn_k)});
      } catch (const Error& e) {
        failures[r].push_back({r, m, e.what()});
      }
    }
  });
  BenchmarkReport report;
  for (std::size_t r = 0; r < n; ++r) {
    report.runs.insert(report.runs.end(), runs[r].begin(), runs[r].end());
    report.failures.insert(report.failures.end(), failures[r].begin(), failures[r].end());
  }
  report.fold_fingerprints = std::move(prints);
  return report;
}

inline BenchmarkReport run_benchmark(const GeneratorConfig& gen, const TrainConfig& cfg, const BenchmarkOptions& opt) {
  std::vector<std::function<Dataset()>> reps;
  for (std::size_t r = 0; r < gen.replications; ++r) reps.push_back([gen, r] { return generate_replication(gen, r); });
  return run_benchmark(reps, cfg, opt);
}

inline BenchmarkReport run_benchmark(const std::vector<Dataset>& data, const TrainConfig& cfg,
                                     const BenchmarkOptions& opt) {
  std::vector<std::function<Dataset()>> reps;
  for (const Dataset& d : data) reps.push_back([&d] { return d; });
  return run_benchmark(reps, cfg, opt);
}

// ---------------------------------------------------------------------------
// ablation and sweep

enum class AblationComponent { db, lb, both };

inline AblationComponent parse_ablation(const std::string& s) {
  if (s == "db") return AblationComponent::db;
  if (s == "lb") return AblationComponent::lb;
  if (s == "both") return AblationComponent::both;
  throw ConfigError("unknown ablation component '" + s + "' (expected db|lb|both)");
}

inline std::string to_string(AblationComponent c) {
  return c == AblationComponent::db ? "db" : (c == AblationComponent::lb ? "lb" : "both");
}

/// db off sets beta = 0 (no TC, no matching); lb off sets the upsample ratio to 0.
inline TrainConfig ablated(TrainConfig cfg, AblationComponent c) {
  if (c != AblationComponent::lb) cfg.beta = 0.0;
  if (c != AblationComponent::db) cfg.upsample_ratio = 0.0;
  return cfg;
}

struct AblationReport {
  AblationComponent component = AblationComponent::both;
  CrossValidation on, off;

  nlohmann::json to_json() const {
    return {{"component", tvae::to_string(component)}, {"on", on.to_json()}, {"off", off.to_json()}};
  }
};

inline AblationReport ablate(const Dataset& data, const TrainConfig& cfg, AblationComponent component,
                             CvOptions opt) {
  opt.diagnostics = true;
  AblationReport r;
  r.component = component;
  r.on = cross_validate(data, cfg, opt);
  r.off = cross_validate(data, ablated(cfg, component), opt);
  if (r.on.fold_fingerprint != r.off.fold_fingerprint) throw ContractError("ablation arms saw different folds");
  return r;
}

struct SweepRow {
  double ratio = 0.0;
  Summary auprc_assignment;
  CrossValidation cv;
};

inline std::vector<SweepRow> sweep_upsample(const Dataset& data, const TrainConfig& cfg,
                                            const std::vector<double>& ratios, const CvOptions& opt) {
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep ratios must lie in [0, 1]");
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    TrainConfig c = cfg;
    c.upsample_ratio = r;
    SweepRow row;
    row.ratio = r;
    row.cv = cross_validate(data, c, opt);
    row.auprc_assignment = summarize(row.cv.values("auprc_assignment"));
    if (!rows.empty() && rows.front().cv.fold_fingerprint != row.cv.fold_fingerprint) {
      throw ContractError("sweep points saw different folds");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "ratio,auprc_assignment_mean,auprc_assignment_stderr\n";
  for (const SweepRow& r : rows) {
    out += detail::format_double(r.ratio) + "," + detail::format_double(r.auprc_assignment.mean) + "," +
           detail::format_double(r.auprc_assignment.stderr_) + "\n";
  }
  return out;
}

}  // namespace tvae
