#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tvae/errors.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

enum class ColumnKind { continuous, binary };
enum class OutcomeMode { binary, continuous };

using FeatureSpec = std::vector<ColumnKind>;

inline std::string to_string(OutcomeMode m) { return m == OutcomeMode::binary ? "binary" : "continuous"; }

inline OutcomeMode parse_outcome_mode(const std::string& s) {
  if (s == "binary") return OutcomeMode::binary;
  if (s == "continuous") return OutcomeMode::continuous;
  throw ConfigError("unknown outcome mode '" + s + "' (expected binary|continuous)");
}

inline std::string to_string(ColumnKind k) { return k == ColumnKind::binary ? "binary" : "continuous"; }

inline ColumnKind parse_column_kind(const std::string& s) {
  if (s == "binary") return ColumnKind::binary;
  if (s == "continuous") return ColumnKind::continuous;
  throw ConfigError("unknown column kind '" + s + "'");
}

/// Per-column affine map fitted on training rows. Binary columns keep
/// mean 0 / scale 1. The outcome pair is only non-trivial in continuous mode.
struct Standardization {
  static constexpr double kVarianceFloor = 1e-8;

  std::vector<double> mean;
  std::vector<double> scale;
  double outcome_mean = 0.0;
  double outcome_scale = 1.0;

  bool operator==(const Standardization&) const = default;

  static Standardization identity(std::size_t p) {
    return Standardization{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0), 0.0, 1.0};
  }

  std::size_t width() const noexcept { return mean.size(); }

  Tensor apply(const Tensor& x) const {
    if (x.cols() != width()) throw DimensionError("standardization width mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / scale[j];
    return out;
  }

  Tensor invert(const Tensor& x) const {
    if (x.cols() != width()) throw DimensionError("standardization width mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * scale[j] + mean[j];
    return out;
  }

  double outcome_to_model(double y) const { return (y - outcome_mean) / outcome_scale; }
  double outcome_from_model(double y) const { return y * outcome_scale + outcome_mean; }
};

/// Population mean / standard deviation of continuous columns over `rows`
/// (all rows when empty). Binary columns are left untouched.
inline Standardization fit_standardization(const Tensor& x, const FeatureSpec& features,
                                           const std::vector<std::size_t>& rows = {}) {
  const std::size_t p = x.cols();
  if (features.size() != p) throw DimensionError("feature spec width does not match data");
  Standardization s = Standardization::identity(p);
  const std::size_t n = rows.empty() ? x.rows() : rows.size();
  if (n == 0) return s;
  for (std::size_t j = 0; j < p; ++j) {
    if (features[j] == ColumnKind::binary) continue;
    double m = 0.0;
    for (std::size_t k = 0; k < n; ++k) m += x(rows.empty() ? k : rows[k], j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = x(rows.empty() ? k : rows[k], j) - m;
      v += d * d;
    }
    v /= static_cast<double>(n);
    s.mean[j] = m;
    s.scale[j] = std::sqrt(std::max(v, Standardization::kVarianceFloor));
  }
  return s;
}

}  // namespace tvae
