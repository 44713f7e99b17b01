#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "tvae/data/csv.hpp"
#include "tvae/train.hpp"

namespace tvae {

/// row_id,propensity,y1hat,y0hat,ite,w,y for raw (unstandardized) rows.
inline std::string predictions_csv(const std::vector<Prediction>& pred, const Dataset& d) {
  if (pred.size() != d.rows()) throw DimensionError("prediction count does not match dataset rows");
  std::string out = "row_id,propensity,y1hat,y0hat,ite,w,y\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Prediction& p = pred[i];
    out += std::to_string(i) + "," + detail::format_double(p.propensity) + "," + detail::format_double(p.y1hat) + "," +
           detail::format_double(p.y0hat) + "," + detail::format_double(p.ite) + "," + std::to_string(d.w[i]) + "," +
           detail::format_double(d.y[i]) + "\n";
  }
  return out;
}

inline void predict_export(const TvaeModel& model, const Dataset& d, const std::string& path) {
  detail::write_file(path, predictions_csv(predict_rows(model, d), d));
}

/// row_id, z1..zd (posterior means), w.
inline std::string latent_csv(const Tensor& mu, const std::vector<int>& w) {
  if (mu.rows() != w.size()) throw DimensionError("latent rows do not match assignments");
  std::string out = "row_id";
  for (std::size_t k = 0; k < mu.cols(); ++k) out += ",z" + std::to_string(k + 1);
  out += ",w\n";
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    out += std::to_string(i);
    for (std::size_t k = 0; k < mu.cols(); ++k) out += "," + detail::format_double(mu(i, k));
    out += "," + std::to_string(w[i]) + "\n";
  }
  return out;
}

/// Plain scatter of two 1-based latent dims, one circle per row, control in
/// blue and treated in red. No density shading.
inline std::string latent_svg(const Tensor& mu, const std::vector<int>& w, std::size_t dim_x, std::size_t dim_y) {
  if (dim_x < 1 || dim_y < 1 || dim_x > mu.cols() || dim_y > mu.cols()) {
    throw ConfigError("scatter dims must lie in 1.." + std::to_string(mu.cols()));
  }
  constexpr double kSize = 400.0, kMargin = 20.0;
  const std::size_t a = dim_x - 1, b = dim_y - 1;
  double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  if (mu.rows() > 0) {
    lo[0] = hi[0] = mu(0, a);
    lo[1] = hi[1] = mu(0, b);
    for (std::size_t i = 0; i < mu.rows(); ++i) {
      lo[0] = std::min(lo[0], mu(i, a));
      hi[0] = std::max(hi[0], mu(i, a));
      lo[1] = std::min(lo[1], mu(i, b));
      hi[1] = std::max(hi[1], mu(i, b));
    }
  }
  auto place = [&](double v, int axis) {
    const double span = hi[axis] > lo[axis] ? hi[axis] - lo[axis] : 1.0;
    const double t = (v - lo[axis]) / span;
    return axis == 0 ? kMargin + t * (kSize - 2 * kMargin) : kSize - kMargin - t * (kSize - 2 * kMargin);
  };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  out += "<text x=\"200\" y=\"395\" text-anchor=\"middle\" font-size=\"10\">z" + std::to_string(dim_x) + "</text>\n";
  out += "<text x=\"8\" y=\"200\" font-size=\"10\">z" + std::to_string(dim_y) + "</text>\n";
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    out += "<circle cx=\"" + detail::format_double(place(mu(i, a), 0)) + "\" cy=\"" +
           detail::format_double(place(mu(i, b), 1)) + "\" r=\"2\" fill=\"" + (w[i] ? "red" : "blue") + "\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

struct LatentScatter {
  std::size_t dim_x = 4;
  std::size_t dim_y = 5;
};

/// Writes `<prefix>.csv` and, unless `scatter` is empty, `<prefix>.svg`.
inline void emit_latent(const TvaeModel& model, const Dataset& d, const std::string& prefix,
                        std::optional<LatentScatter> scatter = LatentScatter{}) {
  const Tensor mu = encode(model, model.standardization.apply(d.x)).mu;
  detail::write_file(prefix + ".csv", latent_csv(mu, d.w));
  if (scatter) detail::write_file(prefix + ".svg", latent_svg(mu, d.w, scatter->dim_x, scatter->dim_y));
}

}  // namespace tvae
