#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tvae/diff.hpp"

namespace tvae {

enum class MatchKind { kernel_mmd, linear_mmd, wasserstein_1d, gaussian_kl };

inline std::string to_string(MatchKind k) {
  switch (k) {
    case MatchKind::kernel_mmd: return "kernel_mmd";
    case MatchKind::linear_mmd: return "linear_mmd";
    case MatchKind::wasserstein_1d: return "wasserstein_1d";
    case MatchKind::gaussian_kl: return "gaussian_kl";
  }
  return "?";
}

inline MatchKind parse_match_kind(const std::string& s) {
  if (s == "kernel_mmd") return MatchKind::kernel_mmd;
  if (s == "linear_mmd") return MatchKind::linear_mmd;
  if (s == "wasserstein_1d") return MatchKind::wasserstein_1d;
  if (s == "gaussian_kl") return MatchKind::gaussian_kl;
  throw ConfigError("unknown match strategy '" + s + "'");
}

/// How treated and control latent samples are pulled together. For the
/// kernel variant, `bandwidths` are absolute RBF widths, or multipliers of
/// the pooled median pairwise distance when `median_scaled` is set.
struct MatchStrategy {
  MatchKind kind = MatchKind::kernel_mmd;
  std::vector<double> bandwidths{0.5, 1.0, 2.0, 4.0};
  bool median_scaled = true;

  static MatchStrategy fixed_kernel(std::vector<double> widths) {
    return MatchStrategy{MatchKind::kernel_mmd, std::move(widths), false};
  }
  static MatchStrategy of(MatchKind kind) {
    MatchStrategy s;
    s.kind = kind;
    return s;
  }

  void validate() const {
    if (kind != MatchKind::kernel_mmd) return;
    if (bandwidths.empty()) throw ConfigError("kernel_mmd needs at least one bandwidth");
    for (double b : bandwidths) {
      if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("kernel bandwidths must be positive and finite");
    }
  }

  bool operator==(const MatchStrategy&) const = default;
};

/// Median of |u_i - u_j| over distinct pairs of the pooled sample; 1 when
/// undefined or zero.
inline double median_pairwise_distance(std::span<const double> a, std::span<const double> b) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  if (n < 2) return 1.0;
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.push_back(std::fabs(pooled[i] - pooled[j]));
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return med > 0.0 && std::isfinite(med) ? med : 1.0;
}

inline std::vector<double> resolve_bandwidths(const MatchStrategy& s, std::span<const double> a,
                                              std::span<const double> b) {
  s.validate();
  if (!s.median_scaled) return s.bandwidths;
  const double med = median_pairwise_distance(a, b);
  std::vector<double> out;
  out.reserve(s.bandwidths.size());
  for (double m : s.bandwidths) out.push_back(m * med);
  return out;
}

namespace detail {

/// Biased (V-statistic) squared MMD with a sum of RBF kernels
/// k(a, b) = exp(-(a - b)^2 / (2 sigma^2)), clamped at zero. The local
/// gradient is accumulated during the forward sweep.
inline diff::Var kernel_mmd_squared(const diff::Var& a, const diff::Var& b, const std::vector<double>& widths) {
  diff::Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.size(), n = bv.size();
  const bool grad = a.requires_grad() || b.requires_grad();
  std::vector<double> ga(grad ? m : 0, 0.0), gb(grad ? n : 0, 0.0);
  const double mm = static_cast<double>(m), nn = static_cast<double>(n);
  double total = 0.0;
  for (double sigma : widths) {
    const double c = 1.0 / (2.0 * sigma * sigma);
    double kaa = static_cast<double>(m), kbb = static_cast<double>(n), kab = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        const double d = av[i] - av[j];
        const double k = std::exp(-c * d * d);
        kaa += 2.0 * k;
        if (grad) {
          const double s = -4.0 * c * d * k / (mm * mm);
          ga[i] += s;
          ga[j] -= s;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = bv[i] - bv[j];
        const double k = std::exp(-c * d * d);
        kbb += 2.0 * k;
        if (grad) {
          const double s = -4.0 * c * d * k / (nn * nn);
          gb[i] += s;
          gb[j] -= s;
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = av[i] - bv[j];
        const double k = std::exp(-c * d * d);
        kab += k;
        if (grad) {
          const double s = 4.0 * c * d * k / (mm * nn);
          ga[i] += s;
          gb[j] -= s;
        }
      }
    }
    total += kaa / (mm * mm) + kbb / (nn * nn) - 2.0 * kab / (mm * nn);
  }
  const bool active = total > 0.0;
  return t.record(Tensor::scalar(active ? total : 0.0), {a, b},
                  [ga = std::move(ga), gb = std::move(gb), active](const Tensor& g, std::span<Tensor* const> grads) {
                    if (!active) return;
                    if (grads[0])
                      for (std::size_t i = 0; i < ga.size(); ++i) (*grads[0])[i] += g[0] * ga[i];
                    if (grads[1])
                      for (std::size_t j = 0; j < gb.size(); ++j) (*grads[1])[j] += g[0] * gb[j];
                  });
}

/// Sorted sample values resampled at quantile levels (k + 0.5) / L by linear
/// interpolation between order statistics placed at (i + 0.5) / m.
inline diff::Var quantiles(const diff::Var& v, std::size_t levels) {
  const Tensor& x = v.value();
  const std::size_t m = x.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  diff::Var sorted = diff::gather(v, order);
  std::vector<std::size_t> lo(levels), hi(levels);
  std::vector<double> w(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    const double pos = (static_cast<double>(k) + 0.5) * static_cast<double>(m) / static_cast<double>(levels) - 0.5;
    if (pos <= 0.0) {
      lo[k] = hi[k] = 0;
      w[k] = 1.0;
    } else if (pos >= static_cast<double>(m - 1)) {
      lo[k] = hi[k] = m - 1;
      w[k] = 1.0;
    } else {
      const auto i0 = static_cast<std::size_t>(std::floor(pos));
      lo[k] = i0;
      hi[k] = i0 + 1;
      w[k] = 1.0 - (pos - static_cast<double>(i0));
    }
  }
  return diff::interpolate(sorted, std::move(lo), std::move(hi), std::move(w));
}

}  // namespace detail

/// Non-negative discrepancy between two one-dimensional samples (group A vs
/// group B of one latent coordinate). `widths` overrides bandwidth
/// resolution for the kernel variant.
inline diff::Var match_penalty(const MatchStrategy& s, const diff::Var& a, const diff::Var& b,
                               const std::vector<double>* widths = nullptr) {
  s.validate();
  if (a.value().rank() != 1 || b.value().rank() != 1) throw DimensionError("match_penalty expects two vectors");
  if (a.value().size() == 0 || b.value().size() == 0) throw ContractError("match_penalty needs two non-empty groups");
  switch (s.kind) {
    case MatchKind::kernel_mmd: {
      const std::vector<double> resolved =
          widths ? *widths : resolve_bandwidths(s, a.value().values(), b.value().values());
      return detail::kernel_mmd_squared(a, b, resolved);
    }
    case MatchKind::linear_mmd:
      return diff::square(diff::sub(diff::mean(a), diff::mean(b)));
    case MatchKind::wasserstein_1d: {
      const std::size_t levels = std::max(a.value().size(), b.value().size());
      return diff::mean(diff::abs(diff::sub(detail::quantiles(a, levels), detail::quantiles(b, levels))));
    }
    case MatchKind::gaussian_kl: {
      constexpr double kVarianceFloor = 1e-6;
      auto moments = [&](const diff::Var& v) {
        diff::Var mu = diff::mean(v);
        diff::Var var = diff::mean(diff::square(diff::sub(v, mu)));
        return std::make_pair(mu, diff::clamp(var, kVarianceFloor, std::numeric_limits<double>::infinity()));
      };
      auto [ma, va] = moments(a);
      auto [mb, vb] = moments(b);
      diff::Var delta2 = diff::square(diff::sub(ma, mb));
      // KL(A||B) + KL(B||A); the log-variance terms cancel
      diff::Var sym = diff::add(diff::div(diff::add(va, delta2), vb), diff::div(diff::add(vb, delta2), va));
      return diff::scale(diff::shift(sym, -2.0), 0.5);
    }
  }
  throw ContractError("unknown match strategy");
}

/// Value-only convenience over plain samples.
inline double match_penalty(const MatchStrategy& s, std::span<const double> a, std::span<const double> b) {
  diff::Tape t;
  diff::Var va = t.constant(Tensor::vector({a.begin(), a.end()}));
  diff::Var vb = t.constant(Tensor::vector({b.begin(), b.end()}));
  return match_penalty(s, va, vb).value().item();
}

}  // namespace tvae
