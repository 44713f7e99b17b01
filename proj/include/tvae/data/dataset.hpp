#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tvae/features.hpp"
#include "tvae/hash.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

/// Covariates, assignments, factual outcomes and (for synthetic data) the
/// potential-outcome ground truth. `synthetic` marks rows produced by the
/// label balancer.
struct Dataset {
  Tensor x{Shape{0, 0}};
  FeatureSpec features;
  std::vector<int> w;
  std::vector<double> y;
  std::optional<std::vector<double>> mu0, mu1, y0, y1;
  std::vector<int> synthetic;

  std::size_t rows() const noexcept { return w.size(); }
  std::size_t cols() const noexcept { return features.size(); }

  bool has_effect_truth() const noexcept { return (mu0 && mu1) || (y0 && y1); }

  /// Noiseless surfaces when present, else the noisy potential outcomes.
  std::pair<const std::vector<double>*, const std::vector<double>*> effect_truth() const {
    if (mu0 && mu1) return {&*mu0, &*mu1};
    if (y0 && y1) return {&*y0, &*y1};
    return {nullptr, nullptr};
  }

  std::size_t treated_count() const {
    std::size_t t = 0;
    for (int v : w) t += v == 1;
    return t;
  }

  bool operator==(const Dataset&) const = default;

  void validate() const {
    const std::size_t n = rows();
    if (x.rank() != 2 || x.rows() != n || x.cols() != features.size()) {
      throw DataError("dataset covariates " + shape_string(x.shape()) + " disagree with " + std::to_string(n) +
                      " rows and " + std::to_string(features.size()) + " feature kinds");
    }
    if (y.size() != n || synthetic.size() != n) throw DataError("dataset column lengths disagree");
    for (const auto* c : {&mu0, &mu1, &y0, &y1})
      if (*c && (*c)->size() != n) throw DataError("ground-truth column length disagrees with row count");
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] != 0 && w[i] != 1) throw DataError("row " + std::to_string(i) + ": w must be 0 or 1");
      if (synthetic[i] != 0 && synthetic[i] != 1) throw DataError("row " + std::to_string(i) + ": bad synthetic flag");
      if (!std::isfinite(y[i])) throw DataError("row " + std::to_string(i) + ": missing factual outcome");
      for (std::size_t j = 0; j < cols(); ++j) {
        const double v = x(i, j);
        if (!std::isfinite(v)) throw DataError("row " + std::to_string(i) + " column x" + std::to_string(j + 1) + ": missing value");
        if (features[j] == ColumnKind::binary && v != 0.0 && v != 1.0) {
          throw DataError("row " + std::to_string(i) + " column x" + std::to_string(j + 1) + ": binary value must be 0 or 1");
        }
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.x = take_rows(x, idx);
    out.features = features;
    auto pick = [&](const auto& v) {
      std::remove_cvref_t<decltype(v)> r;
      r.reserve(idx.size());
      for (std::size_t i : idx) r.push_back(v.at(i));
      return r;
    };
    out.w = pick(w);
    out.y = pick(y);
    out.synthetic = pick(synthetic);
    if (mu0) out.mu0 = pick(*mu0);
    if (mu1) out.mu1 = pick(*mu1);
    if (y0) out.y0 = pick(*y0);
    if (y1) out.y1 = pick(*y1);
    return out;
  }

  /// Content hash over every column, used to pair runs and manifests.
  std::string fingerprint() const {
    Fingerprint f;
    f.add(static_cast<std::uint64_t>(rows())).add(static_cast<std::uint64_t>(cols()));
    for (ColumnKind k : features) f.add(static_cast<std::uint64_t>(k));
    f.add_all<double>(x.values());
    f.add_all<int>(w);
    f.add_all<double>(y);
    f.add_all<int>(synthetic);
    for (const auto* c : {&mu0, &mu1, &y0, &y1}) {
      f.add(static_cast<std::uint64_t>(c->has_value()));
      if (*c) f.add_all<double>(**c);
    }
    return f.hex();
  }
};

/// Column-wise concatenation of rows; ground truth survives only when both
/// sides carry it.
inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.features != b.features) throw DataError("cannot merge datasets with different column schemas");
  Dataset out;
  out.features = a.features;
  out.x = a.rows() == 0 ? b.x : (b.rows() == 0 ? a.x : vstack(a.x, b.x));
  if (out.x.rank() != 2) out.x = Tensor(Shape{0, a.cols()});
  auto join = [](auto l, const auto& r) {
    l.insert(l.end(), r.begin(), r.end());
    return l;
  };
  out.w = join(a.w, b.w);
  out.y = join(a.y, b.y);
  out.synthetic = join(a.synthetic, b.synthetic);
  auto join_opt = [&](const std::optional<std::vector<double>>& l, const std::optional<std::vector<double>>& r)
      -> std::optional<std::vector<double>> {
    if (l && r) return join(*l, *r);
    return std::nullopt;
  };
  out.mu0 = join_opt(a.mu0, b.mu0);
  out.mu1 = join_opt(a.mu1, b.mu1);
  out.y0 = join_opt(a.y0, b.y0);
  out.y1 = join_opt(a.y1, b.y1);
  return out;
}

/// Covariates mapped through `s`; outcomes and labels untouched.
inline Dataset standardized(const Dataset& d, const Standardization& s) {
  Dataset out = d;
  out.x = s.apply(d.x);
  return out;
}

/// Training-row statistics for the covariates (and for continuous outcomes
/// when `outcome` is continuous), then the standardized copy.
inline std::pair<Dataset, Standardization> standardize(const Dataset& d, OutcomeMode outcome,
                                                       const std::vector<std::size_t>& rows = {}) {
  Standardization s = fit_standardization(d.x, d.features, rows);
  if (outcome == OutcomeMode::continuous) {
    const std::size_t n = rows.empty() ? d.rows() : rows.size();
    if (n > 0) {
      double m = 0.0, v = 0.0;
      for (std::size_t k = 0; k < n; ++k) m += d.y[rows.empty() ? k : rows[k]];
      m /= static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double e = d.y[rows.empty() ? k : rows[k]] - m;
        v += e * e;
      }
      v /= static_cast<double>(n);
      s.outcome_mean = m;
      s.outcome_scale = std::sqrt(std::max(v, Standardization::kVarianceFloor));
    }
  }
  return {standardized(d, s), s};
}

}  // namespace tvae
