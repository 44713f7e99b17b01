#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tvae/diff.hpp"
#include "tvae/features.hpp"
#include "tvae/losses/estimators.hpp"
#include "tvae/losses/matching.hpp"
#include "tvae/model.hpp"

namespace tvae {

/// Per-batch means of every objective term.
struct LossReport {
  double recon = 0.0;
  double kl_prior = 0.0;
  double supervised = 0.0;
  double tc = 0.0;
  double mmd_sum = 0.0;
  double total = 0.0;

  bool operator==(const LossReport&) const = default;
};

/// One standardized minibatch. `y` is on the model's outcome scale.
struct Batch {
  Tensor x;  // [n x p]
  std::vector<int> w;
  std::vector<double> y;
};

struct LossSettings {
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 1.0;
  MatchStrategy match;
  OutcomeMode outcome = OutcomeMode::continuous;
  bool kl_on_supervised = false;
  double kl_weight = 1.0;
  std::size_t dataset_size = 0;  // rows the batch was drawn from; 0 means the batch itself
  // per-free-dim kernel widths; bypasses bandwidth resolution when set
  std::optional<std::vector<std::vector<double>>> fixed_widths;

  static LossSettings from(const ModelConfig& c, std::size_t dataset_size) {
    LossSettings s;
    s.alpha = c.alpha;
    s.beta = c.beta;
    s.gamma = c.gamma;
    s.match = c.match;
    s.outcome = c.outcome;
    s.kl_on_supervised = c.kl_on_supervised;
    s.kl_weight = c.kl_weight;
    s.dataset_size = dataset_size;
    return s;
  }
};

namespace detail {

inline Tensor column_mask(const FeatureSpec& features, ColumnKind kind) {
  Tensor m(Shape{features.size()});
  for (std::size_t j = 0; j < features.size(); ++j) m[j] = features[j] == kind ? 1.0 : 0.0;
  return m;
}

inline void check_labels(const std::vector<int>& w, const std::vector<double>& y, std::size_t n) {
  if (w.size() != n) throw DimensionError("assignment count does not match batch rows");
  if (y.size() != n) throw DataError("factual outcome missing for some rows");
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] != 0 && w[i] != 1) throw DataError("assignment must be 0 or 1 (row " + std::to_string(i) + ")");
    if (!std::isfinite(y[i])) throw DataError("factual outcome missing at row " + std::to_string(i));
  }
}

/// sum over rows of softplus(l) - t * l, the cross-entropy of logistic(l) against t.
inline diff::Var bce_with_logits(const diff::Var& logits, const diff::Var& targets) {
  return diff::sub(diff::softplus(logits), diff::mul(targets, logits));
}

}  // namespace detail

/// Negative log-likelihood of `x` under the decoder output: unit-variance
/// Gaussian (constant dropped) for continuous columns, cross-entropy against
/// logistic(raw) for binary ones. Summed over columns, mean over rows.
inline diff::Var recon_loss(const diff::Var& raw, const Tensor& x, const FeatureSpec& features) {
  if (raw.value().shape() != x.shape() || x.rank() != 2 || x.cols() != features.size()) {
    throw DimensionError("recon_loss shapes disagree with the feature spec");
  }
  diff::Tape& t = *raw.tape();
  const double n = static_cast<double>(std::max<std::size_t>(x.rows(), 1));
  diff::Var xv = t.constant(x);
  diff::Var cont = diff::scale(diff::square(diff::sub(xv, raw)), 0.5);
  diff::Var bin = detail::bce_with_logits(raw, xv);
  diff::Var per_cell = diff::add(diff::mul(cont, t.constant(detail::column_mask(features, ColumnKind::continuous))),
                                 diff::mul(bin, t.constant(detail::column_mask(features, ColumnKind::binary))));
  return diff::scale(diff::sum(per_cell), 1.0 / n);
}

/// Value form over reconstruction parameters (means / probabilities).
inline double recon_loss(const Tensor& x, const Tensor& params, const FeatureSpec& features) {
  if (params.shape() != x.shape() || x.rank() != 2 || x.cols() != features.size()) {
    throw DimensionError("recon_loss shapes disagree with the feature spec");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double v = x(i, j), q = params(i, j);
      if (features[j] == ColumnKind::continuous) {
        total += 0.5 * (v - q) * (v - q);
      } else {
        if (!(q > 0.0 && q < 1.0)) throw ContractError("binary reconstruction probability outside (0, 1)");
        total -= v * std::log(q) + (1.0 - v) * std::log1p(-q);
      }
    }
  return x.rows() ? total / static_cast<double>(x.rows()) : 0.0;
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over latent coordinates from
/// `first_dim` on, mean over rows.
inline diff::Var kl_prior(const diff::Var& mu, const diff::Var& logvar, std::size_t first_dim = 0) {
  if (mu.value().shape() != logvar.value().shape() || mu.value().rank() != 2) {
    throw DimensionError("kl_prior expects mu and logvar of identical [n x d] shape");
  }
  const std::size_t n = mu.value().rows(), d = mu.value().cols();
  diff::Var m = first_dim ? diff::slice_cols(mu, first_dim, d) : mu;
  diff::Var l = first_dim ? diff::slice_cols(logvar, first_dim, d) : logvar;
  diff::Var cell = diff::sub(diff::add(diff::square(m), diff::exp(l)), diff::shift(l, 1.0));
  return diff::scale(diff::sum(cell), 0.5 / static_cast<double>(std::max<std::size_t>(n, 1)));
}

inline double kl_prior(const Posterior& post) {
  diff::Tape t;
  return kl_prior(t.constant(post.mu), t.constant(post.logvar)).value().item();
}

/// Assignment cross-entropy on coordinate 0 plus the factual-outcome term on
/// the coordinate matching each row's assignment. The counterfactual
/// coordinate is left unsupervised.
inline diff::Var supervised_loss(const diff::Var& latent, const std::vector<int>& w, const std::vector<double>& y,
                                 OutcomeMode mode) {
  const Tensor& zv = latent.value();
  if (zv.rank() != 2 || zv.cols() < LatentLayout::kMinDims) throw DimensionError("supervised_loss expects [n x d>=4]");
  const std::size_t n = zv.rows();
  detail::check_labels(w, y, n);
  diff::Tape& t = *latent.tape();
  Tensor wt(Shape{n}), ct(Shape{n}), yt(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    wt[i] = w[i];
    ct[i] = 1.0 - w[i];
    yt[i] = y[i];
  }
  const diff::Var wv = t.constant(wt);
  diff::Var assign = detail::bce_with_logits(diff::column(latent, LatentLayout::kAssignment), wv);
  diff::Var factual =
      diff::add(diff::mul(diff::column(latent, LatentLayout::kTreatedOutcome), wv),
                diff::mul(diff::column(latent, LatentLayout::kControlOutcome), t.constant(ct)));
  diff::Var outcome = mode == OutcomeMode::binary ? detail::bce_with_logits(factual, t.constant(yt))
                                                  : diff::square(diff::sub(factual, t.constant(yt)));
  return diff::scale(diff::sum(diff::add(assign, outcome)), 1.0 / static_cast<double>(std::max<std::size_t>(n, 1)));
}

inline double supervised_loss(const Tensor& latent, const std::vector<int>& w, const std::vector<double>& y,
                              OutcomeMode mode) {
  diff::Tape t;
  return supervised_loss(t.constant(latent), w, y, mode).value().item();
}

struct DbTerms {
  diff::Var tc;
  diff::Var mmd_sum;  // unweighted sum over free coordinates
  std::vector<std::vector<double>> widths;  // kernel widths used per free coordinate
};

/// Total correlation over all latent coordinates plus the per-free-coordinate
/// matching penalties between control and treated rows. The matching sum is
/// zero when the batch lacks either group.
inline DbTerms db_terms(const diff::Var& z, const diff::Var& mu, const diff::Var& logvar, std::size_t dataset_size,
                        const std::vector<int>& w, const MatchStrategy& strategy,
                        const std::vector<std::vector<double>>* fixed_widths = nullptr) {
  diff::Tape& t = *z.tape();
  const std::size_t n = z.value().rows(), d = z.value().cols();
  if (w.size() != n) throw DimensionError("assignment count does not match batch rows");
  DbTerms out{t.constant(Tensor::scalar(0.0)), t.constant(Tensor::scalar(0.0)), {}};
  if (n >= 2) {
    std::vector<std::size_t> all(d);
    for (std::size_t k = 0; k < d; ++k) all[k] = k;
    out.tc = tc_estimate(z, mu, logvar, std::max(dataset_size, n), all);
  }
  std::vector<std::size_t> control, treated;
  for (std::size_t i = 0; i < n; ++i) (w[i] ? treated : control).push_back(i);
  if (control.empty() || treated.empty()) return out;
  if (fixed_widths && fixed_widths->size() != d - LatentLayout::kFirstFree) {
    throw DimensionError("fixed kernel widths must cover every free coordinate");
  }
  std::vector<diff::Var> parts;
  for (std::size_t j = LatentLayout::kFirstFree; j < d; ++j) {
    diff::Var col = diff::column(z, j);
    diff::Var a = diff::gather(col, control);
    diff::Var b = diff::gather(col, treated);
    std::vector<double> widths;
    if (strategy.kind == MatchKind::kernel_mmd) {
      widths = fixed_widths ? (*fixed_widths)[j - LatentLayout::kFirstFree]
                            : resolve_bandwidths(strategy, a.value().values(), b.value().values());
    }
    parts.push_back(match_penalty(strategy, a, b, strategy.kind == MatchKind::kernel_mmd ? &widths : nullptr));
    out.widths.push_back(std::move(widths));
  }
  diff::Var acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) acc = diff::add(acc, parts[k]);
  out.mmd_sum = acc;
  return out;
}

/// tc + gamma * sum of matching penalties.
inline diff::Var db_loss(const diff::Var& z, const diff::Var& mu, const diff::Var& logvar, std::size_t dataset_size,
                         const std::vector<int>& w, const MatchStrategy& strategy, double gamma) {
  DbTerms terms = db_terms(z, mu, logvar, dataset_size, w, strategy);
  return diff::add(terms.tc, diff::scale(terms.mmd_sum, gamma));
}

struct LossTerms {
  diff::Var total;
  LossReport report;
  std::vector<std::vector<double>> widths;
};

/// Full objective from one encode / reparameterize / decode pass:
/// recon + alpha * supervised + kl_weight * kl + beta * tc + beta * gamma * mmd_sum.
/// With beta == 0 the disentanglement and matching terms are not evaluated.
inline LossTerms total_loss(const BoundModel& m, const Batch& batch, const Tensor& noise, const LossSettings& s) {
  diff::Tape& t = *m.params.front().tape();
  const std::size_t n = batch.x.rows();
  if (n == 0) throw DataError("empty batch");
  detail::check_labels(batch.w, batch.y, n);

  const PosteriorVars post = encode(m, t.constant(batch.x));
  const diff::Var z = reparameterize(post, t.constant(noise));
  const diff::Var raw = decode_raw(m, z);

  const diff::Var recon = recon_loss(raw, batch.x, m.model->features);
  diff::Var kl = kl_prior(post.mu, post.logvar, s.kl_on_supervised ? 0 : LatentLayout::kFirstFree);
  if (s.kl_weight != 1.0) kl = diff::scale(kl, s.kl_weight);
  const diff::Var sup = supervised_loss(post.mu, batch.w, batch.y, s.outcome);

  diff::Var total = diff::add(diff::add(recon, kl), diff::scale(sup, s.alpha));
  LossTerms out{total, {}, {}};
  out.report.recon = recon.value().item();
  out.report.kl_prior = kl.value().item();
  out.report.supervised = sup.value().item();
  if (s.beta != 0.0) {
    const std::size_t dataset = s.dataset_size ? s.dataset_size : n;
    DbTerms db = db_terms(z, post.mu, post.logvar, dataset, batch.w, s.match,
                          s.fixed_widths ? &*s.fixed_widths : nullptr);
    out.report.tc = db.tc.value().item();
    out.report.mmd_sum = db.mmd_sum.value().item();
    total = diff::add(total, diff::scale(diff::add(db.tc, diff::scale(db.mmd_sum, s.gamma)), s.beta));
    out.widths = std::move(db.widths);
  }
  out.total = total;
  out.report.total = total.value().item();
  return out;
}

}  // namespace tvae
