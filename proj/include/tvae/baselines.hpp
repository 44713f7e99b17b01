#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvae/data/dataset.hpp"
#include "tvae/model.hpp"

namespace tvae {

inline constexpr double kRidgeFallback = 1e-8;

/// Intercept first, then one coefficient per design column.
struct LinearModel {
  std::vector<double> coef;

  double predict(std::span<const double> x, std::optional<double> extra = std::nullopt) const {
    double v = coef.at(0);
    for (std::size_t j = 0; j < x.size(); ++j) v += coef.at(j + 1) * x[j];
    if (extra) v += coef.at(x.size() + 1) * *extra;
    return v;
  }
};

namespace detail {

/// Least squares through the normal equations; a ridge of 1e-8 is added when
/// the Gram matrix is numerically singular.
inline std::vector<double> solve_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target) {
  const Eigen::MatrixXd gram = design.transpose() * design;
  const Eigen::VectorXd rhs = design.transpose() * target;
  auto attempt = [&](double ridge) -> std::optional<Eigen::VectorXd> {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    if (!(ldlt.rcond() > 1e3 * std::numeric_limits<double>::epsilon())) return std::nullopt;
    Eigen::VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) return std::nullopt;
    return sol;
  };
  auto sol = attempt(0.0);
  if (!sol) sol = attempt(kRidgeFallback);
  if (!sol) throw FitError("least-squares design is degenerate even with ridge fallback");
  return std::vector<double>(sol->data(), sol->data() + sol->size());
}

inline Eigen::MatrixXd design_matrix(const Dataset& d, const std::vector<std::size_t>& rows, bool with_w) {
  const std::size_t p = d.cols();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p + 1 + (with_w ? 1 : 0)));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    m(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) m(i, static_cast<Eigen::Index>(j + 1)) = d.x(rows[r], j);
    if (with_w) m(i, static_cast<Eigen::Index>(p + 1)) = d.w[rows[r]];
  }
  return m;
}

inline Eigen::VectorXd target_vector(const Dataset& d, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) y(static_cast<Eigen::Index>(r)) = d.y[rows[r]];
  return y;
}

inline std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.rows());
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

inline std::vector<std::size_t> group_rows(const Dataset& d, int group) {
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < d.rows(); ++i)
    if (d.w[i] == group) r.push_back(i);
  return r;
}

}  // namespace detail

/// Single regression of y on [x, w]; the effect is the w coefficient.
struct OlsS {
  LinearModel model;

  static OlsS fit(const Dataset& d) {
    if (d.rows() == 0) throw FitError("cannot fit on an empty dataset");
    const auto rows = detail::all_rows(d);
    return OlsS{LinearModel{detail::solve_least_squares(detail::design_matrix(d, rows, true), detail::target_vector(d, rows))}};
  }

  double effect() const { return model.coef.back(); }

  std::vector<Prediction> predict(const Tensor& x) const {
    std::vector<Prediction> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out[i].propensity = std::nan("");
      out[i].y1hat = model.predict(x.row(i), 1.0);
      out[i].y0hat = model.predict(x.row(i), 0.0);
      out[i].ite = out[i].y1hat - out[i].y0hat;
    }
    return out;
  }
};

/// Separate regressions for treated and control rows.
struct OlsT {
  LinearModel treated, control;

  static OlsT fit(const Dataset& d) {
    OlsT m;
    for (int g : {1, 0}) {
      const auto rows = detail::group_rows(d, g);
      if (rows.empty()) throw FitError(std::string("no ") + (g ? "treated" : "control") + " rows to fit");
      (g ? m.treated : m.control).coef =
          detail::solve_least_squares(detail::design_matrix(d, rows, false), detail::target_vector(d, rows));
    }
    return m;
  }

  std::vector<Prediction> predict(const Tensor& x) const {
    std::vector<Prediction> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out[i].propensity = std::nan("");
      out[i].y1hat = treated.predict(x.row(i));
      out[i].y0hat = control.predict(x.row(i));
      out[i].ite = out[i].y1hat - out[i].y0hat;
    }
    return out;
  }
};

/// Mean factual outcome of the k nearest rows of each group (Euclidean on
/// standardized covariates, ties to the lower row index).
struct Knn {
  Dataset reference;
  std::size_t k = 5;

  static Knn fit(const Dataset& d, std::size_t k = 5) {
    if (k < 1) throw ConfigError("knn needs k >= 1");
    return Knn{d, k};
  }

  std::pair<double, double> effect(std::span<const double> query) const {
    if (query.size() != reference.cols()) throw DimensionError("knn query width mismatch");
    double result[2] = {0.0, 0.0};
    for (int g : {0, 1}) {
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t i = 0; i < reference.rows(); ++i) {
        if (reference.w[i] != g) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
          const double e = reference.x(i, j) - query[j];
          s += e * e;
        }
        dist.emplace_back(s, i);
      }
      if (dist.size() < k) {
        throw QueryError(std::string(g ? "treated" : "control") + " group has fewer than k=" + std::to_string(k) +
                         " rows");
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      double acc = 0.0;
      for (std::size_t m = 0; m < k; ++m) acc += reference.y[dist[m].second];
      result[g] = acc / static_cast<double>(k);
    }
    return {result[1], result[0]};
  }

  std::vector<Prediction> predict(const Tensor& x) const {
    std::vector<Prediction> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto [y1, y0] = effect(x.row(i));
      out[i].propensity = std::nan("");
      out[i].y1hat = y1;
      out[i].y0hat = y0;
      out[i].ite = y1 - y0;
    }
    return out;
  }
};

inline std::pair<double, double> knn_effect(const Dataset& d, std::span<const double> query, std::size_t k) {
  return Knn::fit(d, k).effect(query);
}

}  // namespace tvae
