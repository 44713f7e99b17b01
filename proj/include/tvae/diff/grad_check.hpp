#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tvae/diff/tape.hpp"

namespace tvae::diff {

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_relative_error_fixed_floor = 0.0;  // same errors with the unscaled floor, for reference
  double loss = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

/// Builds a scalar loss from parameter variables bound on a fresh tape.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
/// whose true derivative is zero from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients against central differences
/// (f(p + eps) - f(p - eps)) / 2 eps on every coordinate of every parameter.
/// The relative-error floor is `floor * max(1, |f(p)|)`: rescaling the loss
/// rescales every derivative, so a fixed floor would make the verdict depend on
/// the loss's units, and the difference quotient cannot resolve derivatives
/// much below eps_machine * |f| / eps anyway.
inline GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor> params, double epsilon,
                                  double tolerance, double floor = 1e-6) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ContractError("grad_check epsilon must lie in (0, 1e-2]");
  for (const Tensor& p : params) {
    for (double v : p.values()) {
      if (!std::isfinite(v)) throw NumericalError("grad_check parameters must be finite");
    }
  }

  std::vector<Tensor> analytic;
  double base = 0.0;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.parameter(p));
    const Var root = build(tape, vars);
    if (!std::isfinite(root.value().item())) throw NumericalError("grad_check loss is not finite at the base point");
    base = root.value().item();
    const Gradients grads = tape.backward(root);
    for (const Var& v : vars) analytic.push_back(grads.of(v));
  }

  auto loss_at = [&](const std::vector<Tensor>& ps) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : ps) vars.push_back(tape.parameter(p));
    try {
      return build(tape, vars).value().item();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  GradCheckReport report;
  report.loss = base;
  const double scaled_floor = floor * std::max(1.0, std::fabs(base));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t c = 0; c < params[pi].size(); ++c) {
      const double orig = params[pi][c];
      params[pi][c] = orig + epsilon;
      const double up = loss_at(params);
      params[pi][c] = orig - epsilon;
      const double down = loss_at(params);
      params[pi][c] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("non-finite loss at perturbed parameter " + std::to_string(pi) + " coordinate " +
                             std::to_string(c));
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = relative_error(analytic[pi][c], numeric, scaled_floor);
      report.max_relative_error_fixed_floor =
          std::max(report.max_relative_error_fixed_floor, relative_error(analytic[pi][c], numeric, floor));
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = pi;
        report.worst_coordinate = c;
        report.analytic = analytic[pi][c];
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace tvae::diff
