#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvae/data/dataset.hpp"
#include "tvae/losses/matching.hpp"
#include "tvae/model.hpp"

namespace tvae {

namespace detail {

inline void check_binary_labels(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) throw MetricError(std::string(what) + ": scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw MetricError(std::string(what) + ": labels must be 0 or 1");
  for (double s : scores)
    if (std::isnan(s)) throw MetricError(std::string(what) + ": NaN score");
}

}  // namespace detail

/// Probability that a random positive outscores a random negative, ties
/// counted one half (Mann-Whitney U over midranks).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_binary_labels(scores, labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += midrank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("auroc needs both classes present");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Average precision: mean over positives of the precision at their rank in
/// a descending stable sort (equal scores keep original order).
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_binary_labels(scores, labels, "auprc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!labels[order[k]]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw MetricError("auprc needs at least one positive");
  return acc / static_cast<double>(hits);
}

namespace detail {

inline void check_effect_lengths(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  if (a != b || a != c || a != d) throw MetricError("effect metric inputs differ in length");
  if (a == 0) throw MetricError("effect metric on empty input");
}

}  // namespace detail

/// Root mean squared error between predicted and true individual effects.
inline double rpehe(std::span<const double> y1hat, std::span<const double> y0hat, std::span<const double> mu1,
                    std::span<const double> mu0) {
  detail::check_effect_lengths(y1hat.size(), y0hat.size(), mu1.size(), mu0.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < y1hat.size(); ++i) {
    const double e = (y1hat[i] - y0hat[i]) - (mu1[i] - mu0[i]);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(y1hat.size()));
}

/// |mean predicted effect - mean true effect|.
inline double ate_error(std::span<const double> y1hat, std::span<const double> y0hat, std::span<const double> mu1,
                        std::span<const double> mu0) {
  detail::check_effect_lengths(y1hat.size(), y0hat.size(), mu1.size(), mu0.size());
  double pred = 0.0, truth = 0.0;
  for (std::size_t i = 0; i < y1hat.size(); ++i) {
    pred += y1hat[i] - y0hat[i];
    truth += mu1[i] - mu0[i];
  }
  return std::fabs(pred - truth) / static_cast<double>(y1hat.size());
}

struct MetricsReport {
  std::optional<double> auroc_assignment, auprc_assignment;
  std::optional<double> auroc_response, auprc_response;
  std::optional<double> rpehe, ate_error;
  std::string fold;
  std::vector<std::string> warnings;

  bool operator==(const MetricsReport&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) j[k] = *v;
    };
    put("auroc_assignment", auroc_assignment);
    put("auprc_assignment", auprc_assignment);
    put("auroc_response", auroc_response);
    put("auprc_response", auprc_response);
    put("rpehe", rpehe);
    put("ate_error", ate_error);
    if (!fold.empty()) j["fold"] = fold;
    if (!warnings.empty()) j["warnings"] = warnings;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    auto get = [&](const char* k, std::optional<double>& v) {
      if (j.contains(k)) v = j.at(k).get<double>();
    };
    get("auroc_assignment", r.auroc_assignment);
    get("auprc_assignment", r.auprc_assignment);
    get("auroc_response", r.auroc_response);
    get("auprc_response", r.auprc_response);
    get("rpehe", r.rpehe);
    get("ate_error", r.ate_error);
    if (j.contains("fold")) r.fold = j.at("fold").get<std::string>();
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  }
};

/// Metrics of a prediction set against a dataset. Response metrics score
/// the factual prediction y_hat(W_i) against Y_i and need binary outcomes;
/// metrics whose labels lack a class are omitted with a warning.
inline MetricsReport metrics_from_predictions(const std::vector<Prediction>& pred, const Dataset& d,
                                              OutcomeMode mode) {
  if (pred.size() != d.rows()) throw MetricError("prediction count does not match dataset rows");
  MetricsReport r;
  const std::size_t n = d.rows();
  std::vector<double> prop(n), factual(n), y1(n), y0(n);
  for (std::size_t i = 0; i < n; ++i) {
    prop[i] = pred[i].propensity;
    factual[i] = d.w[i] ? pred[i].y1hat : pred[i].y0hat;
    y1[i] = pred[i].y1hat;
    y0[i] = pred[i].y0hat;
  }
  const std::size_t treated = d.treated_count();
  const bool has_propensity = std::none_of(prop.begin(), prop.end(), [](double v) { return std::isnan(v); });
  if (!has_propensity) {
    r.warnings.push_back("assignment metrics omitted: predictor has no propensity readout");
  } else if (treated > 0 && treated < n) {
    r.auroc_assignment = auroc(prop, d.w);
    r.auprc_assignment = auprc(prop, d.w);
  } else {
    r.warnings.push_back("assignment metrics omitted: evaluation rows contain a single treatment group");
  }
  if (mode == OutcomeMode::binary) {
    std::vector<int> labels(n);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += (labels[i] = d.y[i] > 0.5 ? 1 : 0);
    if (pos > 0 && pos < n) {
      r.auroc_response = auroc(factual, labels);
      r.auprc_response = auprc(factual, labels);
    } else {
      r.warnings.push_back("response metrics omitted: evaluation outcomes contain a single class");
    }
  }
  if (auto [m0, m1] = d.effect_truth(); m0 && n > 0) {
    r.rpehe = rpehe(y1, y0, *m1, *m0);
    r.ate_error = ate_error(y1, y0, *m1, *m0);
  }
  return r;
}

struct LatentDimRecord {
  std::size_t dim = 0;  // 1-based
  double group_mean_0 = 0.0, group_mean_1 = 0.0;
  double group_var_0 = 0.0, group_var_1 = 0.0;
  double mmd = 0.0;
  double max_abs_corr = 0.0;

  bool operator==(const LatentDimRecord&) const = default;
};

struct LatentDiagnostics {
  std::vector<LatentDimRecord> dims;
  std::vector<std::vector<double>> corr;  // |corr| between posterior-mean coordinates

  bool operator==(const LatentDiagnostics&) const = default;

  std::string to_csv() const;
};

inline constexpr double kDiagnosticBandwidth = 1.0;

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string LatentDiagnostics::to_csv() const {
  std::string out = "dim,group_mean_0,group_mean_1,group_var_0,group_var_1,mmd,max_abs_corr\n";
  for (const LatentDimRecord& r : dims) {
    out += std::to_string(r.dim) + "," + detail::fmt17(r.group_mean_0) + "," + detail::fmt17(r.group_mean_1) + "," +
           detail::fmt17(r.group_var_0) + "," + detail::fmt17(r.group_var_1) + "," + detail::fmt17(r.mmd) + "," +
           detail::fmt17(r.max_abs_corr) + "\n";
  }
  return out;
}

/// Per-coordinate group moments, kernel discrepancy with a fixed unit
/// bandwidth and absolute correlations of posterior means over `x`
/// (standardized covariates). A coordinate whose group is absent reports NaN
/// moments and discrepancy.
inline LatentDiagnostics latent_diagnostics(const Tensor& mu, const std::vector<int>& w) {
  const std::size_t n = mu.rows(), d = mu.cols();
  if (w.size() != n) throw DimensionError("assignment count does not match latent rows");
  LatentDiagnostics out;
  out.corr.assign(d, std::vector<double>(d, 0.0));
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) mean[k] += mu(i, k) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sd[k] += (mu(i, k) - mean[k]) * (mu(i, k) - mean[k]);
    sd[k] = std::sqrt(sd[k]);
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      if (a == b) {
        out.corr[a][b] = 1.0;
        continue;
      }
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += (mu(i, a) - mean[a]) * (mu(i, b) - mean[b]);
      const double denom = sd[a] * sd[b];
      out.corr[a][b] = denom > 0.0 ? std::fabs(c / denom) : 0.0;
    }
  const MatchStrategy kernel = MatchStrategy::fixed_kernel({kDiagnosticBandwidth});
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<double> g[2];
    for (std::size_t i = 0; i < n; ++i) g[w[i] ? 1 : 0].push_back(mu(i, k));
    LatentDimRecord r;
    r.dim = k + 1;
    auto moments = [](const std::vector<double>& v, double& m, double& var) {
      if (v.empty()) {
        m = var = std::nan("");
        return;
      }
      m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      var = 0.0;
      for (double x : v) var += (x - m) * (x - m) / static_cast<double>(v.size());
    };
    moments(g[0], r.group_mean_0, r.group_var_0);
    moments(g[1], r.group_mean_1, r.group_var_1);
    r.mmd = g[0].empty() || g[1].empty() ? std::nan("") : match_penalty(kernel, g[0], g[1]);
    for (std::size_t o = 0; o < d; ++o)
      if (o != k) r.max_abs_corr = std::max(r.max_abs_corr, out.corr[k][o]);
    out.dims.push_back(r);
  }
  return out;
}

/// Diagnostics of the model's posterior means on standardized covariates.
inline LatentDiagnostics latent_diagnostics(const TvaeModel& model, const Dataset& standardized_data) {
  return latent_diagnostics(encode(model, standardized_data.x).mu, standardized_data.w);
}

}  // namespace tvae
