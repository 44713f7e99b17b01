#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tvae/data/dataset.hpp"
#include "tvae/data/split.hpp"
#include "tvae/model.hpp"

namespace tvae {

/// Counts for one round of minority upsampling.
struct UpsamplePlan {
  std::size_t n_control = 0;
  std::size_t n_treated_real = 0;
  double ratio = 0.0;
  std::size_t n_fake = 0;

  /// Treated rows the merged set ends up with.
  std::size_t treated_target() const { return n_treated_real + n_fake; }
  bool operator==(const UpsamplePlan&) const = default;
};

/// n_fake = max(0, round(ratio * n_control) - n_treated_real).
inline UpsamplePlan plan_upsample(std::size_t n_control, std::size_t n_treated_real, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("upsample ratio must lie in [0, 1]");
  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_control)));
  return UpsamplePlan{n_control, n_treated_real, ratio, target > n_treated_real ? target - n_treated_real : 0};
}

inline UpsamplePlan plan_upsample(const Dataset& d, double ratio) {
  const std::size_t t = d.treated_count();
  return plan_upsample(d.rows() - t, t, ratio);
}

/// How a decoded latent sample becomes a covariate row.
enum class FakeDecoding {
  mean,    // decoder mean; binary probabilities thresholded at 0.5
  sample,  // draw from the decoder likelihood: unit-variance Gaussian, Bernoulli
};

inline std::string to_string(FakeDecoding f) { return f == FakeDecoding::mean ? "mean" : "sample"; }

inline FakeDecoding parse_fake_decoding(const std::string& s) {
  if (s == "mean") return FakeDecoding::mean;
  if (s == "sample") return FakeDecoding::sample;
  throw ConfigError("unknown fake decoding '" + s + "' (expected mean|sample)");
}

/// Synthetic treated rows decoded from posterior samples of real treated rows.
///
/// `treated` must already be standardized with the model's statistics and
/// contain only treated rows. Sources are dealt round-robin over a seeded
/// shuffle, so with n_fake = q * n_src + r every source is used q or q + 1
/// times. Each fake copies its source's factual outcome (and any ground-truth
/// columns) and is flagged synthetic. Nothing here touches a tape, so fakes
/// are constants for the optimizer.
inline Dataset generate_fakes(const TvaeModel& model, const Dataset& treated, const UpsamplePlan& plan,
                              std::uint64_t seed, FakeDecoding decoding = FakeDecoding::sample) {
  Dataset out;
  out.features = treated.features;
  out.x = Tensor(Shape{0, treated.cols()});
  if (plan.n_fake == 0) {
    if (treated.mu0 && treated.mu1) out.mu0 = out.mu1 = std::vector<double>{};
    if (treated.y0 && treated.y1) out.y0 = out.y1 = std::vector<double>{};
    return out;
  }
  if (treated.rows() == 0) throw DataError("cannot upsample: no treated rows to sample from");
  for (int w : treated.w)
    if (w != 1) throw ContractError("generate_fakes expects treated rows only");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(treated.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::seeded_shuffle(order, rng);
  std::vector<std::size_t> source(plan.n_fake);
  for (std::size_t k = 0; k < plan.n_fake; ++k) source[k] = order[k % order.size()];

  const Dataset src = treated.subset(source);
  const Posterior post = encode(model, src.x);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise(post.mu.shape());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
  Tensor x = decode(model, reparameterize(post, noise));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const bool binary = out.features[j] == ColumnKind::binary;
      if (decoding == FakeDecoding::mean) {
        if (binary) x(i, j) = x(i, j) >= 0.5 ? 1.0 : 0.0;
      } else {
        x(i, j) = binary ? (unit(rng) < x(i, j) ? 1.0 : 0.0) : x(i, j) + normal(rng);
      }
    }

  out = src;
  out.x = std::move(x);
  out.synthetic.assign(out.rows(), 1);
  return out;
}

/// Real rows followed by fakes.
inline Dataset merge(const Dataset& real, const Dataset& fakes) {
  for (int s : fakes.synthetic)
    if (s != 1) throw ContractError("merge expects every fake to carry the synthetic flag");
  return concat(real, fakes);
}

/// Fold rows that are synthetic; evaluation splits must have none.
inline void require_no_fakes(const Dataset& d, const char* what) {
  for (int s : d.synthetic)
    if (s) throw DataError(std::string(what) + " contains synthetic rows");
}

}  // namespace tvae
