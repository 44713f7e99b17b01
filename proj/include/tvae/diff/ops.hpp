#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvae/diff/tape.hpp"

namespace tvae::diff {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("use of an unbound Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operation mixes variables from different tapes");
  return t;
}

/// Output shape plus per-dimension element strides of both operands (zero on
/// broadcast dimensions). Shapes are aligned on their trailing dimensions.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline Broadcast broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.same = a == b;
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  auto dim = [r](const Shape& s, std::size_t i) -> std::size_t {
    const std::size_t off = r - s.size();
    return i < off ? 1 : s[i - off];
  };
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = dim(a, i), db = dim(b, i);
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_string(a) + " and " + shape_string(b) + " are not broadcastable");
    }
    bc.out[i] = da == 1 ? db : da;
  }
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t da = dim(a, i), db = dim(b, i);
    bc.stride_a[i] = da == 1 ? 0 : sa;
    bc.stride_b[i] = db == 1 ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return bc;
}

/// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t total = shape_size(bc.out);
  if (total == 0) return;
  if (bc.same) {
    for (std::size_t k = 0; k < total; ++k) f(k, k, k);
    return;
  }
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = bc.out[r - 1];
  const std::size_t ia_step = bc.stride_a[r - 1], ib_step = bc.stride_b[r - 1];
  std::vector<std::size_t> counter(r, 0);
  std::size_t ia0 = 0, ib0 = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    std::size_t ia = ia0, ib = ib0;
    for (std::size_t j = 0; j < inner; ++j, ia += ia_step, ib += ib_step) f(base + j, ia, ib);
    // advance the outer multi-index
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++counter[d] < bc.out[d]) {
        ia0 += bc.stride_a[d];
        ib0 += bc.stride_b[d];
        break;
      }
      ia0 -= bc.stride_a[d] * (bc.out[d] - 1);
      ib0 -= bc.stride_b[d] * (bc.out[d] - 1);
      counter[d] = 0;
    }
  }
}

/// Elementwise binary op. `dfa(x, y, out)` and `dfb(x, y, out)` are the local
/// partial derivatives.
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, F f, DA dfa, DB dfb) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast bc = broadcast(av.shape(), bv.shape());
  Tensor out(bc.out);
  for_each_broadcast(bc, [&](std::size_t k, std::size_t ia, std::size_t ib) { out[k] = f(av[ia], bv[ib]); });
  const std::size_t ida = a.id(), idb = b.id(), ido = t.size();
  return t.record(std::move(out), {a, b},
                  [&t, ida, idb, ido, bc, dfa, dfb](const Tensor& g, std::span<Tensor* const> grads) {
                    const Tensor& x = t.value(ida);
                    const Tensor& y = t.value(idb);
                    const Tensor& o = t.value(ido);
                    for_each_broadcast(bc, [&](std::size_t k, std::size_t ia, std::size_t ib) {
                      if (grads[0]) (*grads[0])[ia] += g[k] * dfa(x[ia], y[ib], o[k]);
                      if (grads[1]) (*grads[1])[ib] += g[k] * dfb(x[ia], y[ib], o[k]);
                    });
                  });
}

/// Elementwise unary op with derivative `df(x, out)`.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k]);
  const std::size_t ida = a.id(), ido = t.size();
  return t.record(std::move(out), {a}, [&t, ida, ido, df](const Tensor& g, std::span<Tensor* const> grads) {
    const Tensor& x = t.value(ida);
    const Tensor& o = t.value(ido);
    Tensor& ga = *grads[0];
    for (std::size_t k = 0; k < x.size(); ++k) ga[k] += g[k] * df(x[k], o[k]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matrix product

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(Shape{m, n});
  if (m && n && k) {
    detail::MutMap(out.data(), m, n).noalias() =
        detail::ConstMap(av.data(), m, k) * detail::ConstMap(bv.data(), k, n);
  }
  const std::size_t ida = a.id(), idb = b.id();
  return t.record(std::move(out), {a, b}, [&t, ida, idb, m, k, n](const Tensor& g, std::span<Tensor* const> grads) {
    if (!m || !n || !k) return;
    detail::ConstMap G(g.data(), m, n);
    if (grads[0]) {
      detail::MutMap(grads[0]->data(), m, k).noalias() += G * detail::ConstMap(t.value(idb).data(), k, n).transpose();
    }
    if (grads[1]) {
      detail::MutMap(grads[1]->data(), k, n).noalias() += detail::ConstMap(t.value(ida).data(), m, k).transpose() * G;
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise arithmetic with trailing-dimension broadcasting

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("division by zero");
  }
  return detail::binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var shift(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return shift(a, s); }
inline Var operator+(double s, const Var& a) { return shift(a, s); }
inline Var operator-(const Var& a, double s) { return shift(a, -s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// elementwise nonlinearities

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var elu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : std::expm1(x); }, [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

inline Var softplus(const Var& a) {
  return detail::unary(a, detail::stable_softplus, [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  for (double v : a.value().values()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return detail::unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

/// Gradient passes only strictly inside (lo, hi).
inline Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp with lo > hi");
  return detail::unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

enum class Elementwise { add, sub, mul, div, sigmoid, tanh, relu, elu, exp, log, softplus, square, sqrt, abs, neg };

/// Runtime dispatch over the elementwise family; binary ops require `b`.
inline Var elementwise(Elementwise op, const Var& a, std::optional<Var> b = std::nullopt) {
  auto need_b = [&]() -> const Var& {
    if (!b) throw ContractError("binary elementwise op requires a second operand");
    return *b;
  };
  switch (op) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::mul: return mul(a, need_b());
    case Elementwise::div: return div(a, need_b());
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::elu: return elu(a);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::softplus: return softplus(a);
    case Elementwise::square: return square(a);
    case Elementwise::sqrt: return sqrt(a);
    case Elementwise::abs: return abs(a);
    case Elementwise::neg: return -a;
  }
  throw ContractError("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> grads) {
    const double gv = g[0];
    for (double& v : grads[0]->values()) v += gv;
  });
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Sum over one axis; the axis is removed from the result shape. An axis of
/// extent zero sums to zeros.
inline Var sum(const Var& a, std::size_t axis) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = a.value();
  const Shape& s = av.shape();
  if (axis >= s.size()) throw DimensionError("reduction axis " + std::to_string(axis) + " out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ext = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < ext; ++e)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * ext + e) * inner + i];
  return t.record(std::move(out), {a}, [outer, ext, inner](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor& ga = *grads[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < ext; ++e)
        for (std::size_t i = 0; i < inner; ++i) ga[(o * ext + e) * inner + i] += g[o * inner + i];
  });
}

inline Var mean(const Var& a, std::size_t axis) {
  const Shape& s = a.value().shape();
  if (axis >= s.size()) throw DimensionError("reduction axis " + std::to_string(axis) + " out of range");
  if (s[axis] == 0) throw ContractError("mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(s[axis]));
}

enum class Reduction { sum, mean };

inline Var reduce(Reduction op, const Var& a, std::optional<std::size_t> axis = std::nullopt) {
  if (op == Reduction::sum) return axis ? sum(a, *axis) : sum(a);
  return axis ? mean(a, *axis) : mean(a);
}

// ---------------------------------------------------------------------------
// structural ops

inline Var reshape(const Var& a, Shape shape) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return t.record(std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor& ga = *grads[0];
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  });
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (begin > end || end > c) throw DimensionError("column slice out of range");
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = av(i, begin + j);
  return t.record(std::move(out), {a}, [r, c, w, begin](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor& ga = *grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
  });
}

/// Column j of a matrix as a vector of length rows.
inline Var column(const Var& a, std::size_t j) {
  const std::size_t r = a.value().rows();
  return reshape(slice_cols(a, j, j + 1), Shape{r});
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t r = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("operation mixes variables from different tapes");
    if (p.value().rows() != r) throw DimensionError("concat_cols row mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out(Shape{r, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out(i, off + j) = v(i, j);
    off += widths[p];
  }
  return t.record(std::move(out), parts, [r, total, widths](const Tensor& g, std::span<Tensor* const> grads) {
    std::size_t o = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (grads[p]) {
        Tensor& gp = *grads[p];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * total + o + j];
      }
      o += widths[p];
    }
  });
}

/// Selects rows (rank-2) or entries (rank-1) by index; indices may repeat.
inline Var gather(const Var& a, std::vector<std::size_t> indices) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() == 0 || av.rank() > 2) throw DimensionError("gather expects a vector or matrix");
  const std::size_t n = av.shape()[0];
  const std::size_t w = av.rank() == 2 ? av.shape()[1] : 1;
  Shape out_shape = av.shape();
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n) throw DimensionError("gather index out of range");
    for (std::size_t j = 0; j < w; ++j) out[k * w + j] = av[indices[k] * w + j];
  }
  return t.record(std::move(out), {a}, [indices = std::move(indices), w](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor& ga = *grads[0];
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t j = 0; j < w; ++j) ga[indices[k] * w + j] += g[k * w + j];
  });
}

/// out[k] = weight[k] * a[lo[k]] + (1 - weight[k]) * a[hi[k]] for a vector a.
/// Used for linearly interpolated quantile functions.
inline Var interpolate(const Var& a, std::vector<std::size_t> lo, std::vector<std::size_t> hi,
                       std::vector<double> weight) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 1) throw DimensionError("interpolate expects a vector");
  if (lo.size() != hi.size() || lo.size() != weight.size()) throw DimensionError("interpolate index size mismatch");
  Tensor out(Shape{lo.size()});
  for (std::size_t k = 0; k < lo.size(); ++k) {
    if (lo[k] >= av.size() || hi[k] >= av.size()) throw DimensionError("interpolate index out of range");
    out[k] = weight[k] * av[lo[k]] + (1.0 - weight[k]) * av[hi[k]];
  }
  return t.record(std::move(out), {a},
                  [lo = std::move(lo), hi = std::move(hi), weight = std::move(weight)](
                      const Tensor& g, std::span<Tensor* const> grads) {
                    Tensor& ga = *grads[0];
                    for (std::size_t k = 0; k < lo.size(); ++k) {
                      ga[lo[k]] += g[k] * weight[k];
                      ga[hi[k]] += g[k] * (1.0 - weight[k]);
                    }
                  });
}

/// Copy of the value with no gradient connection.
inline Var detach(const Var& a) { return detail::tape_of(a).constant(a.value()); }

}  // namespace tvae::diff
