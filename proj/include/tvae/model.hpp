#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tvae/diff.hpp"
#include "tvae/features.hpp"
#include "tvae/losses/matching.hpp"

namespace tvae {

enum class Activation { relu, elu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "elu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  throw ConfigError("unknown activation '" + s + "' (expected relu|elu)");
}

/// Roles of the leading latent coordinates (0-based). Coordinates from
/// `kFirstFree` on are unsupervised representation.
struct LatentLayout {
  static constexpr std::size_t kAssignment = 0;
  static constexpr std::size_t kTreatedOutcome = 1;
  static constexpr std::size_t kControlOutcome = 2;
  static constexpr std::size_t kFirstFree = 3;
  static constexpr std::size_t kMinDims = 4;

  /// Coordinate holding the factual outcome of a unit with assignment w.
  static constexpr std::size_t outcome_dim(int w) { return w ? kTreatedOutcome : kControlOutcome; }
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 10;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::relu;
  OutcomeMode outcome = OutcomeMode::continuous;
  FeatureSpec features;  // empty means every column is continuous
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 1.0;
  MatchStrategy match;
  // prior KL on the three supervised coordinates too; off by default because the
  // prior pulls every readout toward zero (to 2/3 of its target at alpha = 1)
  bool kl_on_supervised = false;
  double kl_weight = 1.0;  // multiplies the prior KL; 1 is the plain ELBO

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (input_dim < 1) throw ConfigError("input dimension must be at least 1");
    if (latent_dim < LatentLayout::kMinDims) {
      throw ConfigError("latent dimension must be at least 4 (three supervised coordinates plus one free)");
    }
    for (std::size_t h : hidden)
      if (h == 0) throw ConfigError("hidden layer widths must be positive");
    if (!features.empty() && features.size() != input_dim) throw ConfigError("feature spec width != input dim");
    if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be non-negative");
    if (!(kl_weight > 0) || !std::isfinite(kl_weight)) throw ConfigError("kl_weight must be positive and finite");
    match.validate();
  }
};

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  bool operator==(const DenseLayer&) const = default;
};

struct Mlp {
  std::vector<DenseLayer> layers;
  bool operator==(const Mlp&) const = default;
};

struct TvaeModel {
  ModelConfig config;
  FeatureSpec features;
  Standardization standardization;
  Mlp encoder;  // input_dim -> ... -> 2 * latent_dim
  Mlp decoder;  // latent_dim -> ... -> input_dim

  bool operator==(const TvaeModel&) const = default;

  std::size_t latent_dim() const noexcept { return config.latent_dim; }
  std::size_t input_dim() const noexcept { return config.input_dim; }

  /// Encoder then decoder layers, weight before bias.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Mlp* net : {&encoder, &decoder})
      for (DenseLayer& l : net->layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const Mlp* net : {&encoder, &decoder})
      for (const DenseLayer& l : net->layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }
};

namespace detail {

inline Mlp init_mlp(const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
  Mlp net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer{Tensor(Shape{in, out}), Tensor(Shape{out})};
    for (double& v : layer.weight.values()) v = u(rng);
    for (double& v : layer.bias.values()) v = u(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace detail

/// Fresh model with fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline TvaeModel init_model(ModelConfig config, std::uint64_t seed) {
  if (config.features.empty()) config.features.assign(config.input_dim, ColumnKind::continuous);
  config.validate();
  TvaeModel model;
  model.config = config;
  model.features = config.features;
  model.standardization = Standardization::identity(config.input_dim);
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> enc{config.input_dim};
  enc.insert(enc.end(), config.hidden.begin(), config.hidden.end());
  enc.push_back(2 * config.latent_dim);
  std::vector<std::size_t> dec{config.latent_dim};
  dec.insert(dec.end(), config.hidden.rbegin(), config.hidden.rend());
  dec.push_back(config.input_dim);

  model.encoder = detail::init_mlp(enc, rng);
  model.decoder = detail::init_mlp(dec, rng);
  return model;
}

inline TvaeModel init_model(std::size_t input_dim, std::size_t latent_dim, std::vector<std::size_t> hidden,
                            std::uint64_t seed) {
  ModelConfig c;
  c.input_dim = input_dim;
  c.latent_dim = latent_dim;
  c.hidden = std::move(hidden);
  return init_model(std::move(c), seed);
}

/// Model parameters placed on a tape, either as trainable leaves or constants.
struct BoundModel {
  const TvaeModel* model = nullptr;
  std::vector<diff::Var> params;

  std::size_t encoder_layers() const { return model->encoder.layers.size(); }
};

inline BoundModel bind(diff::Tape& tape, const TvaeModel& model, bool trainable) {
  BoundModel b{&model, {}};
  for (const Tensor* p : model.parameters()) b.params.push_back(trainable ? tape.parameter(*p) : tape.constant(*p));
  return b;
}

struct PosteriorVars {
  diff::Var mu;
  diff::Var logvar;
};

struct Posterior {
  Tensor mu;      // [n x d]
  Tensor logvar;  // [n x d], within [-10, 10]
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

namespace detail {

inline diff::Var activate(Activation a, const diff::Var& x) {
  return a == Activation::relu ? diff::relu(x) : diff::elu(x);
}

inline diff::Var run_mlp(const BoundModel& m, std::size_t first_param, std::size_t layers, diff::Var h) {
  for (std::size_t l = 0; l < layers; ++l) {
    const diff::Var& w = m.params[first_param + 2 * l];
    const diff::Var& b = m.params[first_param + 2 * l + 1];
    h = diff::add(diff::matmul(h, w), b);
    if (l + 1 < layers) h = activate(m.model->config.activation, h);
  }
  return h;
}

}  // namespace detail

/// Diagonal-Gaussian posterior parameters for standardized inputs.
inline PosteriorVars encode(const BoundModel& m, const diff::Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != m.model->input_dim()) {
    throw DimensionError("encode expects [n x " + std::to_string(m.model->input_dim()) + "] input, got " +
                         shape_string(xv.shape()));
  }
  for (double v : xv.values())
    if (!std::isfinite(v)) throw NumericalError("non-finite value in encoder input");
  const std::size_t d = m.model->latent_dim();
  diff::Var out = detail::run_mlp(m, 0, m.encoder_layers(), x);
  return PosteriorVars{diff::slice_cols(out, 0, d), diff::clamp(diff::slice_cols(out, d, 2 * d), kLogvarMin, kLogvarMax)};
}

/// z = mu + exp(logvar / 2) * noise
inline diff::Var reparameterize(const PosteriorVars& post, const diff::Var& noise) {
  if (noise.value().shape() != post.mu.value().shape()) {
    throw DimensionError("noise shape " + shape_string(noise.value().shape()) + " does not match posterior " +
                         shape_string(post.mu.value().shape()));
  }
  return diff::add(post.mu, diff::mul(diff::exp(diff::scale(post.logvar, 0.5)), noise));
}

/// Raw decoder output: means for continuous columns, logits for binary ones.
inline diff::Var decode_raw(const BoundModel& m, const diff::Var& z) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2 || zv.cols() != m.model->latent_dim()) {
    throw DimensionError("decode expects [n x " + std::to_string(m.model->latent_dim()) + "] latent input");
  }
  const std::size_t first = 2 * m.encoder_layers();
  return detail::run_mlp(m, first, m.model->decoder.layers.size(), z);
}

// value-level entry points ---------------------------------------------------

inline Posterior encode(const TvaeModel& model, const Tensor& x) {
  diff::Tape t;
  BoundModel b = bind(t, model, false);
  PosteriorVars p = encode(b, t.constant(x));
  return Posterior{p.mu.value(), p.logvar.value()};
}

inline Tensor reparameterize(const Posterior& post, const Tensor& noise) {
  diff::Tape t;
  return reparameterize(PosteriorVars{t.constant(post.mu), t.constant(post.logvar)}, t.constant(noise)).value();
}

/// Reconstruction parameters: per-column mean for continuous features and
/// per-column probability for binary ones.
inline Tensor decode(const TvaeModel& model, const Tensor& z) {
  diff::Tape t;
  BoundModel b = bind(t, model, false);
  Tensor out = decode_raw(b, t.constant(z)).value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      if (model.features[j] == ColumnKind::binary) out(i, j) = diff::detail::stable_sigmoid(out(i, j));
  return out;
}

struct Prediction {
  double propensity = 0.5;
  double y1hat = 0.0;
  double y0hat = 0.0;
  double ite = 0.0;
};

/// Deterministic readout from posterior means of standardized inputs.
/// Continuous outcomes are mapped back to the original outcome scale.
inline std::vector<Prediction> predict(const TvaeModel& model, const Tensor& x) {
  const Posterior post = encode(model, x);
  std::vector<Prediction> out(post.mu.rows());
  const bool binary = model.config.outcome == OutcomeMode::binary;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Prediction& p = out[i];
    p.propensity = diff::detail::stable_sigmoid(post.mu(i, LatentLayout::kAssignment));
    const double a = post.mu(i, LatentLayout::kTreatedOutcome);
    const double b = post.mu(i, LatentLayout::kControlOutcome);
    if (binary) {
      p.y1hat = diff::detail::stable_sigmoid(a);
      p.y0hat = diff::detail::stable_sigmoid(b);
    } else {
      p.y1hat = model.standardization.outcome_from_model(a);
      p.y0hat = model.standardization.outcome_from_model(b);
    }
    p.ite = p.y1hat - p.y0hat;
  }
  return out;
}

}  // namespace tvae
