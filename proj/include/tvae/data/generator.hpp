#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tvae/data/dataset.hpp"
#include "tvae/kv_config.hpp"

namespace tvae {

enum class Surface { ihdp, linear };

/// IHDP-like semi-synthetic generator settings.
struct GeneratorConfig {
  static constexpr std::size_t kBinaryColumns = 6;

  std::size_t n = 747;
  std::size_t p = 25;
  double treated_fraction = 139.0 / 747.0;
  double temperature = 1.0;  // selection-bias temperature; inf gives a randomized trial
  double noise_sd = 1.0;
  OutcomeMode outcome = OutcomeMode::continuous;
  Surface surface = Surface::ihdp;
  std::uint64_t seed = 0;
  std::size_t replications = 1;

  void validate() const {
    if (n < 2) throw ConfigError("generator needs n >= 2");
    if (p < kBinaryColumns + 1) throw ConfigError("generator needs p >= 7 (six binary columns plus one continuous)");
    if (!(treated_fraction > 0.0 && treated_fraction < 1.0)) throw ConfigError("treated_fraction must lie in (0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ConfigError("noise_sd must be finite and >= 0");
    if (replications < 1) throw ConfigError("replications must be >= 1");
  }

  static GeneratorConfig from(const KvConfig& kv) { return from(kv, GeneratorConfig()); }

  static GeneratorConfig from(const KvConfig& kv, GeneratorConfig c) {
    c.n = kv.get_size("n", c.n);
    c.p = kv.get_size("p", c.p);
    c.treated_fraction = kv.get("treated_fraction", c.treated_fraction);
    c.temperature = kv.get("temperature", c.temperature);
    c.noise_sd = kv.get("noise_sd", c.noise_sd);
    c.outcome = parse_outcome_mode(kv.get("outcome", to_string(c.outcome)));
    const std::string s = kv.get("surface", std::string(c.surface == Surface::ihdp ? "ihdp" : "linear"));
    if (s == "ihdp") {
      c.surface = Surface::ihdp;
    } else if (s == "linear") {
      c.surface = Surface::linear;
    } else {
      throw ConfigError("unknown surface '" + s + "' (expected ihdp|linear)");
    }
    c.seed = kv.get("seed", c.seed);
    c.replications = kv.get_size("replications", c.replications);
    c.validate();
    return c;
  }
};

namespace detail {

inline double logistic(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

/// Offset c with mean_i logistic((s_i - c) / tau) == target.
inline double calibrate_offset(const std::vector<double>& score, double tau, double target) {
  auto frac = [&](double c) {
    double acc = 0.0;
    for (double s : score) acc += logistic((s - c) / tau);
    return acc / static_cast<double>(score.size());
  };
  double lo = -1.0, hi = 1.0;
  while (frac(lo) < target && lo > -1e6) lo *= 2.0;
  while (frac(hi) > target && hi < 1e6) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (frac(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::vector<double> draw_coefficients(std::size_t p, std::mt19937_64& rng, bool random_sign) {
  static constexpr double kValues[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  std::discrete_distribution<int> pick({0.6, 0.1, 0.1, 0.1, 0.1});
  std::bernoulli_distribution sign(0.5);
  std::vector<double> b(p);
  for (double& v : b) {
    v = kValues[pick(rng)];
    if (random_sign && sign(rng)) v = -v;
  }
  return b;
}

}  // namespace detail

/// One replication, fully determined by (config.seed, index).
///
/// Covariates: p - 6 standard-normal columns followed by 6 binary columns
/// with per-column rates in [0.2, 0.8]. Continuous surfaces:
/// mu0 = exp((x + 0.5) . beta), mu1 = x . beta - omega with omega set so the
/// sample mean effect is exactly 4 (the linear surface uses mu0 = x . beta,
/// mu1 = mu0 + x . delta + 4). Binary mode squashes both surfaces through a
/// logistic after pooled centring/scaling and draws Bernoulli outcomes.
inline Dataset generate_replication(const GeneratorConfig& cfg, std::uint64_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = cfg.n, p = cfg.p, pc = p - GeneratorConfig::kBinaryColumns;

  Dataset d;
  d.features.assign(p, ColumnKind::continuous);
  for (std::size_t j = pc; j < p; ++j) d.features[j] = ColumnKind::binary;
  std::vector<double> rate(GeneratorConfig::kBinaryColumns);
  for (double& r : rate) r = 0.2 + 0.6 * unit(rng);
  d.x = Tensor(Shape{n, p});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < pc; ++j) d.x(i, j) = normal(rng);
    for (std::size_t j = pc; j < p; ++j) d.x(i, j) = unit(rng) < rate[j - pc] ? 1.0 : 0.0;
  }

  const std::vector<double> beta = detail::draw_coefficients(p, rng, false);
  const std::vector<double> delta = detail::draw_coefficients(p, rng, true);
  const std::vector<double> beta_w = detail::draw_coefficients(p, rng, true);

  std::vector<double> f0(n), f1(n), score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lin = 0.0, shifted = 0.0, het = 0.0, s = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      lin += d.x(i, j) * beta[j];
      shifted += (d.x(i, j) + 0.5) * beta[j];
      het += d.x(i, j) * delta[j];
      s += d.x(i, j) * beta_w[j];
    }
    if (cfg.surface == Surface::ihdp) {
      f0[i] = std::exp(shifted);
      f1[i] = lin;
    } else {
      f0[i] = lin;
      f1[i] = lin + het;
    }
    score[i] = s;
  }
  double mean_gap = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_gap += (f1[i] - f0[i]) / static_cast<double>(n);
  const double omega = mean_gap - 4.0;
  for (double& v : f1) v -= omega;

  std::vector<double> m0(n), m1(n);
  if (cfg.outcome == OutcomeMode::continuous) {
    m0 = f0;
    m1 = f1;
  } else {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += (f0[i] + f1[i]) / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      var += ((f0[i] - mean) * (f0[i] - mean) + (f1[i] - mean) * (f1[i] - mean)) / (2.0 * static_cast<double>(n));
    }
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (std::size_t i = 0; i < n; ++i) {
      m0[i] = detail::logistic((f0[i] - mean) / sd);
      m1[i] = detail::logistic((f1[i] - mean) / sd);
    }
  }

  std::vector<double> y0(n), y1(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.outcome == OutcomeMode::continuous) {
      y0[i] = m0[i] + cfg.noise_sd * normal(rng);
      y1[i] = m1[i] + cfg.noise_sd * normal(rng);
    } else {
      y0[i] = unit(rng) < m0[i] ? 1.0 : 0.0;
      y1[i] = unit(rng) < m1[i] ? 1.0 : 0.0;
    }
  }

  std::vector<double> propensity(n, cfg.treated_fraction);
  if (std::isfinite(cfg.temperature)) {
    const double c = detail::calibrate_offset(score, cfg.temperature, cfg.treated_fraction);
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      propensity[i] = detail::logistic((score[i] - c) / cfg.temperature);
      expected += propensity[i] / static_cast<double>(n);
    }
    if (std::fabs(expected - cfg.treated_fraction) > 0.2 * cfg.treated_fraction) {
      throw GenerationError("treated fraction " + std::to_string(cfg.treated_fraction) +
                            " is not attainable (calibrated to " + std::to_string(expected) + ")");
    }
  }
  d.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.w[i] = unit(rng) < propensity[i] ? 1 : 0;
  const std::size_t treated = d.treated_count();
  if (treated == 0 || treated == n) {
    throw GenerationError("replication " + std::to_string(index) + " drew a single treatment group");
  }

  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.y[i] = d.w[i] ? y1[i] : y0[i];
  d.mu0 = std::move(m0);
  d.mu1 = std::move(m1);
  d.y0 = std::move(y0);
  d.y1 = std::move(y1);
  d.synthetic.assign(n, 0);
  return d;
}

}  // namespace tvae
