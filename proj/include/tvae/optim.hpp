#pragma once

#include <cmath>
#include <vector>

#include "tvae/errors.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamSettings&) const = default;
};

/// Adaptive-moment optimizer with bias-corrected first and second moments.
class Adam {
 public:
  explicit Adam(AdamSettings s) : s_(s) {}

  std::size_t steps() const noexcept { return t_; }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw ContractError("adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape(), 0.0);
        v_.emplace_back(p->shape(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ContractError("adam: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = grads[k];
      if (g.shape() != p.shape()) throw DimensionError("adam: gradient shape mismatch");
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g[i];
        v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g[i] * g[i];
        p[i] -= s_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s_.eps);
      }
    }
  }

 private:
  AdamSettings s_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace tvae
