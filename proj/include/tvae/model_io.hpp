#pragma once

#include <string>

#include "json.hpp"
#include "tvae/data/csv.hpp"
#include "tvae/model.hpp"

namespace tvae {

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json tensor_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

inline nlohmann::json mlp_json(const Mlp& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const DenseLayer& l : m.layers) layers.push_back({{"weight", tensor_json(l.weight)}, {"bias", tensor_json(l.bias)}});
  return layers;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp m;
  for (const auto& l : j) m.layers.push_back({tensor_from_json(l.at("weight")), tensor_from_json(l.at("bias"))});
  return m;
}

inline nlohmann::json kinds_json(const FeatureSpec& f) {
  nlohmann::json a = nlohmann::json::array();
  for (ColumnKind k : f) a.push_back(to_string(k));
  return a;
}

inline FeatureSpec kinds_from_json(const nlohmann::json& j) {
  FeatureSpec f;
  for (const auto& k : j) f.push_back(parse_column_kind(k.get<std::string>()));
  return f;
}

}  // namespace detail

/// Self-describing JSON document. Doubles are written with round-trip
/// precision, so load(save(m)) == m bit for bit.
inline nlohmann::json model_to_json(const TvaeModel& m) {
  const ModelConfig& c = m.config;
  nlohmann::json cfg = {{"input_dim", c.input_dim},
                        {"latent_dim", c.latent_dim},
                        {"hidden", c.hidden},
                        {"activation", to_string(c.activation)},
                        {"outcome", to_string(c.outcome)},
                        {"features", detail::kinds_json(c.features)},
                        {"alpha", c.alpha},
                        {"beta", c.beta},
                        {"gamma", c.gamma},
                        {"match", to_string(c.match.kind)},
                        {"bandwidths", c.match.bandwidths},
                        {"median_scaled", c.match.median_scaled},
                        {"kl_on_supervised", c.kl_on_supervised},
                        {"kl_weight", c.kl_weight}};
  nlohmann::json stats = {{"mean", m.standardization.mean},
                          {"scale", m.standardization.scale},
                          {"outcome_mean", m.standardization.outcome_mean},
                          {"outcome_scale", m.standardization.outcome_scale}};
  return {{"format_version", kModelFormatVersion},
          {"config", cfg},
          {"features", detail::kinds_json(m.features)},
          {"standardization", stats},
          {"encoder", detail::mlp_json(m.encoder)},
          {"decoder", detail::mlp_json(m.decoder)}};
}

inline TvaeModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw ParseError("unsupported model format_version " + j.at("format_version").dump());
    }
    const nlohmann::json& c = j.at("config");
    TvaeModel m;
    m.config.input_dim = c.at("input_dim").get<std::size_t>();
    m.config.latent_dim = c.at("latent_dim").get<std::size_t>();
    m.config.hidden = c.at("hidden").get<std::vector<std::size_t>>();
    m.config.activation = parse_activation(c.at("activation").get<std::string>());
    m.config.outcome = parse_outcome_mode(c.at("outcome").get<std::string>());
    m.config.features = detail::kinds_from_json(c.at("features"));
    m.config.alpha = c.at("alpha").get<double>();
    m.config.beta = c.at("beta").get<double>();
    m.config.gamma = c.at("gamma").get<double>();
    m.config.match.kind = parse_match_kind(c.at("match").get<std::string>());
    m.config.match.bandwidths = c.at("bandwidths").get<std::vector<double>>();
    m.config.match.median_scaled = c.at("median_scaled").get<bool>();
    m.config.kl_on_supervised = c.at("kl_on_supervised").get<bool>();
    m.config.kl_weight = c.at("kl_weight").get<double>();
    m.config.validate();
    m.features = detail::kinds_from_json(j.at("features"));
    const nlohmann::json& s = j.at("standardization");
    m.standardization.mean = s.at("mean").get<std::vector<double>>();
    m.standardization.scale = s.at("scale").get<std::vector<double>>();
    m.standardization.outcome_mean = s.at("outcome_mean").get<double>();
    m.standardization.outcome_scale = s.at("outcome_scale").get<double>();
    m.encoder = detail::mlp_from_json(j.at("encoder"));
    m.decoder = detail::mlp_from_json(j.at("decoder"));
    if (m.features.size() != m.config.input_dim || m.standardization.width() != m.config.input_dim) {
      throw ParseError("model file feature width disagrees with input_dim");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const TvaeModel& m, const std::string& path) {
  detail::write_file(path, model_to_json(m).dump(1) + "\n");
}

inline TvaeModel load_model(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model file '" + path + "' is not JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace tvae
