#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "tvae/diff.hpp"

namespace tvae {

/// One signed term of an aggregate-posterior entropy combination: the mean
/// over the batch of `coefficient * log q(z_dims)`.
struct DensityTerm {
  std::vector<std::size_t> dims;
  double coefficient = 1.0;
};

namespace detail {

/// Log importance weight of batch component j when estimating the aggregate
/// density at the sample drawn from component i. The sample's own component
/// carries weight 1/N; the other M - 1 members stand in for the remaining
/// N - 1 rows of the dataset. With N == M this is the exact batch mixture.
struct MixtureWeights {
  double self;
  double other;

  MixtureWeights(std::size_t batch, std::size_t dataset) {
    const double m = static_cast<double>(batch);
    const double n = static_cast<double>(std::max(dataset, batch));
    self = -std::log(n);
    other = std::log((n - 1.0) / (n * (m - 1.0)));
  }
};

inline void check_posterior_shapes(const Tensor& z, const Tensor& mu, const Tensor& logvar) {
  if (z.rank() != 2 || z.shape() != mu.shape() || z.shape() != logvar.shape()) {
    throw DimensionError("estimator expects z, mu and logvar of identical [M x d] shape");
  }
}

/// Scalar sum_t coef_t * mean_i log q_hat(z_i restricted to dims_t), where
/// q_hat mixes the batch's diagonal-Gaussian posteriors. The gradient with
/// respect to z, mu and logvar is accumulated in the same sweep.
inline diff::Var mixture_entropy_combination(const diff::Var& z, const diff::Var& mu, const diff::Var& logvar,
                                             std::size_t dataset_size, const std::vector<DensityTerm>& terms) {
  const Tensor& zv = z.value();
  const Tensor& mv = mu.value();
  const Tensor& lv = logvar.value();
  check_posterior_shapes(zv, mv, lv);
  const std::size_t M = zv.rows(), d = zv.cols();
  if (M < 2) throw ContractError("estimator needs a minibatch of at least 2 samples");

  std::set<std::size_t> used_set;
  for (const DensityTerm& t : terms) {
    if (t.dims.empty()) throw ContractError("density term with no dimensions");
    for (std::size_t k : t.dims) {
      if (k >= d) throw DimensionError("latent index " + std::to_string(k) + " out of range");
      used_set.insert(k);
    }
  }
  const std::vector<std::size_t> used(used_set.begin(), used_set.end());
  const std::size_t U = used.size(), T = terms.size();
  // position of each term's dims inside `used`
  std::vector<std::vector<std::size_t>> slot(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k : terms[t].dims)
      slot[t].push_back(static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), k) - used.begin()));

  const MixtureWeights w(M, dataset_size);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const bool grad = z.requires_grad() || mu.requires_grad() || logvar.requires_grad();

  // per-component constants
  std::vector<double> inv_var(M * U), norm(M * U);
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t u = 0; u < U; ++u) {
      const double l = lv(j, used[u]);
      inv_var[j * U + u] = std::exp(-l);
      norm[j * U + u] = -half_log_2pi - 0.5 * l;
    }

  std::vector<double> gz, gmu, glv;
  if (grad) {
    gz.assign(M * d, 0.0);
    gmu.assign(M * d, 0.0);
    glv.assign(M * d, 0.0);
  }

  std::vector<double> ell(M * U), a(M * T), coef(M * U);
  const double inv_m = 1.0 / static_cast<double>(M);
  double total = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const double lw = i == j ? w.self : w.other;
      for (std::size_t u = 0; u < U; ++u) {
        const double diff = zv(i, used[u]) - mv(j, used[u]);
        ell[j * U + u] = norm[j * U + u] - 0.5 * diff * diff * inv_var[j * U + u];
      }
      for (std::size_t t = 0; t < T; ++t) {
        double s = lw;
        for (std::size_t u : slot[t]) s += ell[j * U + u];
        a[j * T + t] = s;
      }
    }
    if (grad) std::fill(coef.begin(), coef.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < M; ++j) mx = std::max(mx, a[j * T + t]);
      double acc = 0.0;
      for (std::size_t j = 0; j < M; ++j) {
        const double e = std::exp(a[j * T + t] - mx);
        a[j * T + t] = e;
        acc += e;
      }
      total += terms[t].coefficient * (mx + std::log(acc));
      if (grad) {
        const double scale = terms[t].coefficient * inv_m / acc;
        for (std::size_t j = 0; j < M; ++j) {
          const double r = a[j * T + t] * scale;
          for (std::size_t u : slot[t]) coef[j * U + u] += r;
        }
      }
    }
    if (grad) {
      for (std::size_t j = 0; j < M; ++j) {
        for (std::size_t u = 0; u < U; ++u) {
          const double c = coef[j * U + u];
          if (c == 0.0) continue;
          const std::size_t k = used[u];
          const double diff = zv(i, k) - mv(j, k);
          const double sd = diff * inv_var[j * U + u];
          gz[i * d + k] -= c * sd;
          gmu[j * d + k] += c * sd;
          glv[j * d + k] += c * 0.5 * (diff * sd - 1.0);
        }
      }
    }
  }
  total *= inv_m;

  diff::Tape& tape = *z.tape();
  return tape.record(Tensor::scalar(total), {z, mu, logvar},
                     [gz = std::move(gz), gmu = std::move(gmu), glv = std::move(glv)](
                         const Tensor& g, std::span<Tensor* const> grads) {
                       const std::vector<double>* local[3] = {&gz, &gmu, &glv};
                       for (std::size_t k = 0; k < 3; ++k) {
                         if (!grads[k]) continue;
                         Tensor& out = *grads[k];
                         for (std::size_t e = 0; e < local[k]->size(); ++e) out[e] += g[0] * (*local[k])[e];
                       }
                     });
}

inline std::vector<std::size_t> checked_dims(std::vector<std::size_t> dims, std::size_t d) {
  std::sort(dims.begin(), dims.end());
  if (std::adjacent_find(dims.begin(), dims.end()) != dims.end()) throw ContractError("duplicate latent index");
  for (std::size_t k : dims)
    if (k >= d) throw DimensionError("latent index " + std::to_string(k) + " out of range");
  return dims;
}

}  // namespace detail

/// Total correlation of the aggregate posterior over `dims` (0-based):
/// E_z[log q(z_dims) - sum_j log q(z_j)], estimated from a minibatch of
/// posterior samples drawn from a dataset of `dataset_size` rows.
inline diff::Var tc_estimate(const diff::Var& z, const diff::Var& mu, const diff::Var& logvar,
                             std::size_t dataset_size, std::vector<std::size_t> dims) {
  detail::check_posterior_shapes(z.value(), mu.value(), logvar.value());
  if (z.value().rows() < 2) throw ContractError("tc_estimate needs a minibatch of at least 2 samples");
  dims = detail::checked_dims(std::move(dims), z.value().cols());
  if (dims.size() <= 1) return z.tape()->constant(Tensor::scalar(0.0));
  std::vector<DensityTerm> terms{{dims, 1.0}};
  for (std::size_t k : dims) terms.push_back({{k}, -1.0});
  return detail::mixture_entropy_combination(z, mu, logvar, dataset_size, terms);
}

/// Mutual information between latent coordinate `dim_a` and the block
/// `dims_b` of the aggregate posterior.
inline diff::Var mutual_info_estimate(const diff::Var& z, const diff::Var& mu, const diff::Var& logvar,
                                      std::size_t dataset_size, std::size_t dim_a, std::vector<std::size_t> dims_b) {
  detail::check_posterior_shapes(z.value(), mu.value(), logvar.value());
  if (z.value().rows() < 2) throw ContractError("mutual_info_estimate needs a minibatch of at least 2 samples");
  dims_b = detail::checked_dims(std::move(dims_b), z.value().cols());
  if (dims_b.empty()) throw ContractError("mutual_info_estimate needs a non-empty second block");
  if (std::find(dims_b.begin(), dims_b.end(), dim_a) != dims_b.end()) {
    throw ContractError("mutual_info_estimate blocks overlap");
  }
  std::vector<std::size_t> joint = dims_b;
  joint.push_back(dim_a);
  std::sort(joint.begin(), joint.end());
  return detail::mixture_entropy_combination(z, mu, logvar, dataset_size,
                                             {{joint, 1.0}, {{dim_a}, -1.0}, {dims_b, -1.0}});
}

/// Value-only overloads over plain tensors.
inline double tc_estimate(const Tensor& z, const Tensor& mu, const Tensor& logvar, std::size_t dataset_size,
                          std::vector<std::size_t> dims) {
  diff::Tape t;
  return tc_estimate(t.constant(z), t.constant(mu), t.constant(logvar), dataset_size, std::move(dims))
      .value()
      .item();
}

inline double mutual_info_estimate(const Tensor& z, const Tensor& mu, const Tensor& logvar,
                                   std::size_t dataset_size, std::size_t dim_a, std::vector<std::size_t> dims_b) {
  diff::Tape t;
  return mutual_info_estimate(t.constant(z), t.constant(mu), t.constant(logvar), dataset_size, dim_a,
                              std::move(dims_b))
      .value()
      .item();
}

}  // namespace tvae
