#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvae/balance.hpp"
#include "tvae/data.hpp"
#include "tvae/kv_config.hpp"
#include "tvae/losses/objective.hpp"
#include "tvae/metrics.hpp"
#include "tvae/model.hpp"
#include "tvae/optim.hpp"

namespace tvae {

/// Everything a training run depends on besides the data.
struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  AdamSettings adam;
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 1.0;
  std::size_t latent_dim = 10;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::relu;
  MatchStrategy match;
  double upsample_ratio = 0.8;
  FakeDecoding fake_decoding = FakeDecoding::sample;
  std::size_t warmup_epochs = 5;
  std::uint64_t seed = 0;
  std::size_t patience = 30;
  double validation_fraction = 0.2;  // stratified early-stopping holdout from the training rows
  double test_fraction = 0.2;        // stratified holdout used by the `train` command's report
  OutcomeMode outcome = OutcomeMode::continuous;
  bool kl_on_supervised = false;
  double kl_weight = 1.0;
  bool standardize_outcome = false;  // continuous mode only

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    // lr == 0 is allowed: it is the null-step check
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in (0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (!(upsample_ratio >= 0.0 && upsample_ratio <= 1.0)) throw ConfigError("upsample_ratio must lie in [0, 1]");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    model_config(1, {}).validate();
  }

  ModelConfig model_config(std::size_t input_dim, FeatureSpec features) const {
    ModelConfig m;
    m.input_dim = input_dim;
    m.latent_dim = latent_dim;
    m.hidden = hidden;
    m.activation = activation;
    m.outcome = outcome;
    m.features = std::move(features);
    m.alpha = alpha;
    m.beta = beta;
    m.gamma = gamma;
    m.match = match;
    m.kl_on_supervised = kl_on_supervised;
    m.kl_weight = kl_weight;
    return m;
  }

  static TrainConfig from(const KvConfig& kv) { return from(kv, TrainConfig()); }

  static TrainConfig from(const KvConfig& kv, TrainConfig c) {
    c.epochs = kv.get_size("epochs", c.epochs);
    c.batch_size = kv.get_size("batch_size", c.batch_size);
    c.adam.lr = kv.get("lr", c.adam.lr);
    c.adam.beta1 = kv.get("adam_beta1", c.adam.beta1);
    c.adam.beta2 = kv.get("adam_beta2", c.adam.beta2);
    c.adam.eps = kv.get("adam_eps", c.adam.eps);
    c.alpha = kv.get("alpha", c.alpha);
    c.beta = kv.get("beta", c.beta);
    c.gamma = kv.get("gamma", c.gamma);
    c.latent_dim = kv.get_size("latent_dim", c.latent_dim);
    c.hidden = kv.get_size_list("hidden", c.hidden);
    c.activation = parse_activation(kv.get("activation", to_string(c.activation)));
    c.match.kind = parse_match_kind(kv.get("match", to_string(c.match.kind)));
    c.match.bandwidths = kv.get_list("bandwidths", c.match.bandwidths);
    c.match.median_scaled = kv.get("median_scaled", c.match.median_scaled);
    c.upsample_ratio = kv.get("upsample_ratio", c.upsample_ratio);
    c.fake_decoding = parse_fake_decoding(kv.get("fake_decoding", to_string(c.fake_decoding)));
    c.warmup_epochs = kv.get_size("warmup_epochs", c.warmup_epochs);
    c.seed = kv.get("seed", c.seed);
    c.patience = kv.get_size("patience", c.patience);
    c.validation_fraction = kv.get("validation_fraction", c.validation_fraction);
    c.test_fraction = kv.get("test_fraction", c.test_fraction);
    c.outcome = parse_outcome_mode(kv.get("outcome", to_string(c.outcome)));
    c.kl_on_supervised = kv.get("kl_on_supervised", c.kl_on_supervised);
    c.kl_weight = kv.get("kl_weight", c.kl_weight);
    c.standardize_outcome = kv.get("standardize_outcome", c.standardize_outcome);
    c.validate();
    return c;
  }

  /// Lossless key=value text; `from(parse(to_text()))` reproduces this config.
  std::string to_text() const {
    auto num = [](double v) { return detail::format_double(v); };
    auto list = [](const auto& v, auto fmt) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
      return s;
    };
    std::string t;
    auto line = [&t](const std::string& k, const std::string& v) { t += k + "=" + v + "\n"; };
    line("epochs", std::to_string(epochs));
    line("batch_size", std::to_string(batch_size));
    line("lr", num(adam.lr));
    line("adam_beta1", num(adam.beta1));
    line("adam_beta2", num(adam.beta2));
    line("adam_eps", num(adam.eps));
    line("alpha", num(alpha));
    line("beta", num(beta));
    line("gamma", num(gamma));
    line("latent_dim", std::to_string(latent_dim));
    line("hidden", list(hidden, [](std::size_t h) { return std::to_string(h); }));
    line("activation", to_string(activation));
    line("match", to_string(match.kind));
    line("bandwidths", list(match.bandwidths, num));
    line("median_scaled", match.median_scaled ? "true" : "false");
    line("upsample_ratio", num(upsample_ratio));
    line("fake_decoding", to_string(fake_decoding));
    line("warmup_epochs", std::to_string(warmup_epochs));
    line("seed", std::to_string(seed));
    line("patience", std::to_string(patience));
    line("validation_fraction", num(validation_fraction));
    line("test_fraction", num(test_fraction));
    line("outcome", to_string(outcome));
    line("kl_on_supervised", kl_on_supervised ? "true" : "false");
    line("kl_weight", num(kl_weight));
    line("standardize_outcome", standardize_outcome ? "true" : "false");
    return t;
  }
};

/// Independent streams derived from the run seed.
enum class SeedPurpose : std::uint32_t { init = 1, holdout = 2, shuffle = 3, noise = 4, fakes = 5, folds = 6, test = 7 };

inline std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline nlohmann::json to_json(const LossReport& r) {
  return {{"recon", r.recon}, {"kl_prior", r.kl_prior}, {"supervised", r.supervised},
          {"tc", r.tc},       {"mmd_sum", r.mmd_sum},   {"total", r.total}};
}

inline LossReport loss_report_from_json(const nlohmann::json& j) {
  LossReport r;
  r.recon = j.at("recon").get<double>();
  r.kl_prior = j.at("kl_prior").get<double>();
  r.supervised = j.at("supervised").get<double>();
  r.tc = j.at("tc").get<double>();
  r.mmd_sum = j.at("mmd_sum").get<double>();
  r.total = j.at("total").get<double>();
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossReport train;  // row-weighted mean over the epoch's batches
  std::optional<double> validation_loss;
  std::size_t n_fake = 0;
};

/// What is needed to replay a run and check that it reproduces.
struct RunManifest {
  std::string config_text;
  std::string dataset_fingerprint;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<MetricsReport> metrics;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json trail = nlohmann::json::array();
    for (const EpochRecord& e : epochs) {
      nlohmann::json r = {{"epoch", e.epoch}, {"train", tvae::to_json(e.train)}, {"n_fake", e.n_fake}};
      r["validation_loss"] = e.validation_loss ? nlohmann::json(*e.validation_loss) : nlohmann::json(nullptr);
      trail.push_back(r);
    }
    nlohmann::json j = {{"format_version", 1},     {"config", config_text}, {"dataset_fingerprint", dataset_fingerprint},
                        {"seed", seed},            {"epochs", trail},       {"best_epoch", best_epoch},
                        {"wall_clock_seconds", wall_clock_seconds}};
    j["metrics"] = metrics ? metrics->to_json() : nlohmann::json(nullptr);
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != 1) throw ParseError("unsupported manifest format_version");
    RunManifest m;
    m.config_text = j.at("config").get<std::string>();
    m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("epochs")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<std::size_t>();
      e.train = loss_report_from_json(r.at("train"));
      e.n_fake = r.at("n_fake").get<std::size_t>();
      if (!r.at("validation_loss").is_null()) e.validation_loss = r.at("validation_loss").get<double>();
      m.epochs.push_back(e);
    }
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    if (!j.at("metrics").is_null()) m.metrics = MetricsReport::from_json(j.at("metrics"));
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return m;
  }

  TrainConfig config() const { return TrainConfig::from(KvConfig::parse(config_text, "manifest config")); }
};

struct TrainResult {
  TvaeModel model;
  RunManifest manifest;
};

namespace detail {

/// Standardized covariates; continuous outcomes moved to model scale.
inline Dataset to_model_space(const Dataset& d, const Standardization& s, OutcomeMode mode) {
  Dataset out = standardized(d, s);
  if (mode == OutcomeMode::continuous)
    for (double& v : out.y) v = s.outcome_to_model(v);
  return out;
}

/// Factual-response loss from posterior means (the early-stopping monitor).
inline double factual_response_loss(const TvaeModel& model, const Dataset& d) {
  const Posterior post = encode(model, d.x);
  double acc = 0.0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const double f = post.mu(i, LatentLayout::outcome_dim(d.w[i]));
    if (model.config.outcome == OutcomeMode::binary) {
      acc += diff::detail::stable_softplus(f) - d.y[i] * f;
    } else {
      acc += (f - d.y[i]) * (f - d.y[i]);
    }
  }
  return acc / static_cast<double>(d.rows());
}

inline void accumulate(LossReport& into, const LossReport& r, double weight) {
  into.recon += weight * r.recon;
  into.kl_prior += weight * r.kl_prior;
  into.supervised += weight * r.supervised;
  into.tc += weight * r.tc;
  into.mmd_sum += weight * r.mmd_sum;
  into.total += weight * r.total;
}

/// Batch boundaries over n rows; a trailing batch of one row joins the previous
/// batch so every batch has at least two rows for the aggregate estimators.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += size) out.emplace_back(b, std::min(n, b + size));
  if (out.size() >= 2 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

}  // namespace detail

/// Train on raw (unstandardized) real rows. Standardization statistics come
/// from the fitting rows only; a stratified slice of the given rows is held
/// out for early stopping when validation_fraction > 0, and the returned
/// model is the best-validation snapshot (the last epoch otherwise).
inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.rows() == 0) throw DataError("cannot train on an empty dataset");
  require_no_fakes(data, "training input");
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> fit_rows = all, val_rows;
  if (cfg.validation_fraction > 0.0) {
    std::tie(fit_rows, val_rows) =
        stratified_holdout(all, data.w, cfg.validation_fraction, derive_seed(cfg.seed, SeedPurpose::holdout));
  }
  Standardization stats = standardize(data, cfg.outcome, fit_rows).second;
  if (!cfg.standardize_outcome) {
    stats.outcome_mean = 0.0;
    stats.outcome_scale = 1.0;
  }
  const Dataset fit = detail::to_model_space(data.subset(fit_rows), stats, cfg.outcome);
  const Dataset val = detail::to_model_space(data.subset(val_rows), stats, cfg.outcome);
  std::vector<std::size_t> treated_rows;
  for (std::size_t i = 0; i < fit.rows(); ++i)
    if (fit.w[i]) treated_rows.push_back(i);
  const Dataset treated = fit.subset(treated_rows);

  const ModelConfig mc = cfg.model_config(data.cols(), data.features);
  TvaeModel model = init_model(mc, derive_seed(cfg.seed, SeedPurpose::init));
  model.standardization = stats;
  Adam opt(cfg.adam);

  RunManifest manifest;
  manifest.config_text = cfg.to_text();
  manifest.dataset_fingerprint = data.fingerprint();
  manifest.seed = cfg.seed;

  std::optional<TvaeModel> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const Dataset* rows = &fit;
    Dataset augmented;
    if (epoch > cfg.warmup_epochs && cfg.upsample_ratio > 0.0) {
      const UpsamplePlan plan = plan_upsample(fit, cfg.upsample_ratio);
      if (plan.n_fake > 0) {
        augmented = merge(fit, generate_fakes(model, treated, plan, derive_seed(cfg.seed, SeedPurpose::fakes, epoch), cfg.fake_decoding));
        rows = &augmented;
        rec.n_fake = plan.n_fake;
      }
    }

    std::vector<std::size_t> order(rows->rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, SeedPurpose::shuffle, epoch));
    detail::seeded_shuffle(order, shuffle_rng);
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, SeedPurpose::noise, epoch));
    std::normal_distribution<double> normal(0.0, 1.0);
    const LossSettings settings = LossSettings::from(mc, rows->rows());

    const auto ranges = detail::batch_ranges(order.size(), cfg.batch_size);
    for (std::size_t b = 0; b < ranges.size(); ++b) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(ranges[b].first),
                                         order.begin() + static_cast<std::ptrdiff_t>(ranges[b].second));
      Batch batch{take_rows(rows->x, idx), {}, {}};
      for (std::size_t i : idx) {
        batch.w.push_back(rows->w[i]);
        batch.y.push_back(rows->y[i]);
      }
      Tensor noise(Shape{idx.size(), mc.latent_dim});
      for (std::size_t k = 0; k < noise.size(); ++k) noise[k] = normal(noise_rng);

      diff::Tape tape;
      const BoundModel bound = bind(tape, model, true);
      const LossTerms terms = total_loss(bound, batch, noise, settings);
      if (!std::isfinite(terms.report.total)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      const diff::Gradients grads = tape.backward(terms.total);
      std::vector<Tensor> g;
      g.reserve(bound.params.size());
      for (const diff::Var& p : bound.params) g.push_back(grads.of(p));
      opt.step(model.parameters(), g);
      detail::accumulate(rec.train, terms.report,
                         static_cast<double>(idx.size()) / static_cast<double>(order.size()));
    }

    bool stop = false;
    if (val.rows() > 0) {
      const double v = detail::factual_response_loss(model, val);
      if (!std::isfinite(v)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
      rec.validation_loss = v;
      if (v < best_val) {
        best_val = v;
        best = model;
        manifest.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stop = true;
      }
    }
    manifest.epochs.push_back(rec);
    if (stop) break;
  }
  if (!best) {
    best = model;
    manifest.best_epoch = manifest.epochs.size();
  }
  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return TrainResult{std::move(*best), std::move(manifest)};
}

/// Predictions for raw rows, standardized with the model's own statistics.
inline std::vector<Prediction> predict_rows(const TvaeModel& model, const Dataset& d) {
  return predict(model, model.standardization.apply(d.x));
}

/// Metrics on raw held-out rows.
inline MetricsReport evaluate(const TvaeModel& model, const Dataset& d) {
  require_no_fakes(d, "evaluation split");
  return metrics_from_predictions(predict_rows(model, d), d, model.config.outcome);
}

/// Stratified test holdout (`test_fraction`), train on the rest, evaluate on
/// the holdout. The manifest fingerprints the whole input so a replay can
/// check it was handed the same file.
inline TrainResult train_and_report(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto [train_rows, test_rows] = stratified_holdout(all, data.w, cfg.test_fraction, derive_seed(cfg.seed, SeedPurpose::test));
  if (test_rows.empty()) throw SplitError("test holdout is empty; need at least two rows per treatment group");
  TrainResult r = train(data.subset(train_rows), cfg);
  r.manifest.dataset_fingerprint = data.fingerprint();
  r.manifest.metrics = evaluate(r.model, data.subset(test_rows));
  return r;
}

struct ReplayCheck {
  MetricsReport recorded;
  MetricsReport replayed;
  bool identical = false;
};

/// Reruns a manifest's config on `data` and compares metrics exactly.
inline ReplayCheck replay(const RunManifest& manifest, const Dataset& data) {
  if (data.fingerprint() != manifest.dataset_fingerprint) {
    throw DataError("dataset fingerprint " + data.fingerprint() + " does not match manifest " +
                    manifest.dataset_fingerprint);
  }
  if (!manifest.metrics) throw DataError("manifest carries no metrics to compare against");
  ReplayCheck c;
  c.recorded = *manifest.metrics;
  c.replayed = *train_and_report(data, manifest.config()).manifest.metrics;
  c.identical = c.recorded == c.replayed;
  return c;
}

}  // namespace tvae
