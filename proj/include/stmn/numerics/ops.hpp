#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stmn/numerics/tensor.hpp"

// Differentiable operations over rank-2 tensors. Vectors are 1xn rows or mx1
// columns, scalars are 1x1.
namespace stmn {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& G = self.grad;
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    if (detail::wants(na)) {
      auto& ga = na->grad_buffer();
      const auto& Bv = nb->value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = G.data() + i * n;
          const double* brow = Bv.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
    }
    if (detail::wants(nb)) {
      auto& gb = nb->grad_buffer();
      const auto& Av = na->value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Av[i * k + p];
          if (av == 0.0) continue;
          const double* grow = G.data() + i * n;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!detail::wants(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (detail::wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    if (detail::wants(na)) {
      auto& g = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
    }
    if (detail::wants(nb)) {
      auto& g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "div");
  std::vector<double> out(a.size());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] / B[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    if (detail::wants(na)) {
      auto& g = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / nb->value[i];
    }
    if (detail::wants(nb)) {
      auto& g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / nb->value[i];
    }
  });
}

// a (m x n) + row (1 x n), broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(row.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto R = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += R[j];
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](detail::Node& self) {
    if (detail::wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// a (m x n) * col (m x 1), broadcast over columns.
inline Tensor mul_col(const Tensor& a, const Tensor& col) {
  detail::require_matrix(a, "mul_col");
  const std::size_t m = a.rows(), n = a.cols();
  if (col.size() != m) {
    throw ShapeError("mul_col: " + shape_str(a.shape()) + " * " + shape_str(col.shape()));
  }
  std::vector<double> out(m * n);
  auto A = a.data();
  auto C = col.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * C[i];
  return make_result(a.shape(), std::move(out), {a, col}, [m, n](detail::Node& self) {
    auto& na = self.inputs[0];
    auto& nc = self.inputs[1];
    if (detail::wants(na)) {
      auto& g = na->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * nc->value[i];
    }
    if (detail::wants(nc)) {
      auto& g = nc->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * na->value[i * n + j];
        g[i] += acc;
      }
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1, 1}, {acc}, {a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// Sum over columns: (m x n) -> (m x 1).
inline Tensor row_sum(const Tensor& a) {
  detail::require_matrix(a, "row_sum");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += A[i * n + j];
  return make_result({m, 1}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

// Mean over rows: (m x n) -> (1 x n).
inline Tensor mean_rows(const Tensor& a) {
  detail::require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw ShapeError("mean_rows of a matrix with no rows");
  std::vector<double> out(n, 0.0);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (auto& v : out) v *= inv;
  return make_result({1, n}, std::move(out), {a}, [m, n, inv](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

enum class Activation { sigmoid, gelu, relu };

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor elementwise(const Tensor& x, Activation kind) {
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = X[i];
    switch (kind) {
      case Activation::sigmoid: out[i] = sigmoid_value(v); break;
      case Activation::gelu: out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); break;
      case Activation::relu: out[i] = v > 0 ? v : 0.0; break;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [kind](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      double d = 0.0;
      switch (kind) {
        case Activation::sigmoid: d = self.value[i] * (1.0 - self.value[i]); break;
        case Activation::gelu: {
          const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
          const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
          d = cdf + v * pdf;
          break;
        }
        case Activation::relu: d = v > 0 ? 1.0 : 0.0; break;
      }
      g[i] += d * self.grad[i];
    }
  });
}

inline Tensor sigmoid(const Tensor& x) { return elementwise(x, Activation::sigmoid); }
inline Tensor gelu(const Tensor& x) { return elementwise(x, Activation::gelu); }
inline Tensor relu(const Tensor& x) { return elementwise(x, Activation::relu); }

inline Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(X[i]);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / in.value[i];
  });
}

inline Tensor abs(const Tensor& x) {
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(X[i]);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      g[i] += (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) * self.grad[i];
    }
  });
}

// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, X[i]));
  return make_result(x.shape(), std::move(out), {x}, [lo, hi](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      if (v >= lo && v <= hi) g[i] += self.grad[i];
    }
  });
}

namespace detail {

// Softmax over `count` entries spaced `stride` apart starting at `base`.
// -inf entries get probability 0; if every entry is -inf the caller supplies
// fallback logits instead.
inline void softmax_slice(const double* in, double* out, std::size_t base, std::size_t count,
                          std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < count; ++t) mx = std::max(mx, in[base + t * stride]);
  double total = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const double e = std::exp(in[base + t * stride] - mx);
    out[base + t * stride] = e;
    total += e;
  }
  for (std::size_t t = 0; t < count; ++t) out[base + t * stride] /= total;
}

inline void softmax_slice_backward(const double* y, const double* gy, double* gx,
                                   std::size_t base, std::size_t count, std::size_t stride) {
  double dot = 0.0;
  for (std::size_t t = 0; t < count; ++t) dot += y[base + t * stride] * gy[base + t * stride];
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t idx = base + t * stride;
    gx[idx] += y[idx] * (gy[idx] - dot);
  }
}

}  // namespace detail

// Max-subtracted softmax along axis 0 (down each column) or axis 1 (along each row).
inline Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  detail::require_matrix(x, "softmax_axis");
  if (axis > 1) throw ShapeError("softmax_axis: axis " + std::to_string(axis) + " out of range");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const double* X = x.data().data();
  if (axis == 1) {
    for (std::size_t i = 0; i < m; ++i) detail::softmax_slice(X, out.data(), i * n, n, 1);
  } else {
    for (std::size_t j = 0; j < n; ++j) detail::softmax_slice(X, out.data(), j, m, n);
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n, axis](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    if (axis == 1) {
      for (std::size_t i = 0; i < m; ++i)
        detail::softmax_slice_backward(self.value.data(), self.grad.data(), g.data(), i * n, n, 1);
    } else {
      for (std::size_t j = 0; j < n; ++j)
        detail::softmax_slice_backward(self.value.data(), self.grad.data(), g.data(), j, m, n);
    }
  });
}

// Row softmax of x + mask, where mask entries are 0 or -inf. A row whose mask
// is entirely -inf falls back to the unmasked logits.
inline Tensor masked_softmax_rows(const Tensor& x, std::span<const double> mask) {
  detail::require_matrix(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.size() != m * n) {
    throw ShapeError("masked_softmax_rows: mask of " + std::to_string(mask.size()) +
                     " entries for logits " + shape_str(x.shape()));
  }
  std::vector<double> logits(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    bool open = false;
    for (std::size_t j = 0; j < n; ++j) open = open || std::isfinite(mask[i * n + j]);
    if (!open) continue;
    for (std::size_t j = 0; j < n; ++j) logits[i * n + j] += mask[i * n + j];
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) detail::softmax_slice(logits.data(), out.data(), i * n, n, 1);
  return make_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      detail::softmax_slice_backward(self.value.data(), self.grad.data(), g.data(), i * n, n, 1);
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each row, then applies gain and bias (both 1 x n).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + ", gain " +
                     shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  auto X = x.data();
  auto G = gain.data();
  auto B = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (X[i * n + j] - mu) * (X[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * G[j] + B[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                       auto& nx = self.inputs[0];
                       auto& ng = self.inputs[1];
                       auto& nb = self.inputs[2];
                       const auto& gy = self.grad;
                       if (detail::wants(ng)) {
                         auto& g = ng->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j] * xhat[i * n + j];
                       }
                       if (detail::wants(nb)) {
                         auto& g = nb->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
                       }
                       if (detail::wants(nx)) {
                         auto& g = nx->grad_buffer();
                         const double dn = static_cast<double>(n);
                         for (std::size_t i = 0; i < m; ++i) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxh = gy[i * n + j] * ng->value[j];
                             s1 += dxh;
                             s2 += dxh * xhat[i * n + j];
                           }
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dxh = gy[i * n + j] * ng->value[j];
                             g[i * n + j] +=
                                 inv_std[i] * (dxh - s1 / dn - xhat[i * n + j] * s2 / dn);
                           }
                         }
                       }
                     });
}

inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(index.size() * n);
  auto X = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(index[r]) + " of " +
                       shape_str(x.shape()));
    }
    std::copy_n(X.begin() + index[r] * n, n, out.begin() + r * n);
  }
  const std::size_t k = index.size();
  return make_result({k, n}, std::move(out), {x}, [n, index = std::move(index)](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[index[r] * n + j] += self.grad[r * n + j];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n) {
      throw ShapeError("concat_rows: " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({m, n}, std::move(out), parts, [](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (detail::wants(in)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += in->value.size();
    }
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (start + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * count);
  auto X = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = X[i * n + start + j];
  return make_result({m, count}, std::move(out), {x}, [m, n, start, count](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  if (parts.size() == 1) return parts.front();
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    auto P = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * n + offset + j] = P[i * c + j];
    offset += c;
  }
  return make_result({m, n}, std::move(out), parts, [m, n](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t c = in->shape[1];
      if (detail::wants(in)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * n + offset + j];
      }
      offset += c;
    }
  });
}

// out[s] = sum of rows r with segment[r] == s.
inline Tensor segment_sum(const Tensor& x, std::vector<std::size_t> segment, std::size_t count) {
  detail::require_matrix(x, "segment_sum");
  const std::size_t m = x.rows(), n = x.cols();
  if (segment.size() != m) {
    throw ShapeError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(count * n, 0.0);
  auto X = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    if (segment[r] >= count) throw ShapeError("segment_sum: segment id out of range");
    for (std::size_t j = 0; j < n; ++j) out[segment[r] * n + j] += X[r * n + j];
  }
  return make_result({count, n}, std::move(out), {x},
                     [n, segment = std::move(segment)](detail::Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t r = 0; r < segment.size(); ++r)
                         for (std::size_t j = 0; j < n; ++j)
                           g[r * n + j] += self.grad[segment[r] * n + j];
                     });
}

// out[s] = mean of rows r with segment[r] == s. Every segment must be nonempty.
inline Tensor segment_mean(const Tensor& x, std::vector<std::size_t> segment, std::size_t count) {
  std::vector<double> sizes(count, 0.0);
  for (auto s : segment) {
    if (s >= count) throw ShapeError("segment_mean: segment id out of range");
    sizes[s] += 1.0;
  }
  for (double c : sizes) {
    if (c == 0.0) throw ContractError("segment_mean: empty segment");
  }
  detail::require_matrix(x, "segment_mean");
  const std::size_t m = x.rows(), n = x.cols();
  if (segment.size() != m) {
    throw ShapeError("segment_mean: " + std::to_string(segment.size()) + " segment ids for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(count * n, 0.0);
  auto X = x.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[segment[r] * n + j] += X[r * n + j];
  for (std::size_t s = 0; s < count; ++s)
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= sizes[s];
  return make_result({count, n}, std::move(out), {x},
                     [n, segment = std::move(segment), sizes = std::move(sizes)](detail::Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t r = 0; r < segment.size(); ++r) {
                         const double w = 1.0 / sizes[segment[r]];
                         for (std::size_t j = 0; j < n; ++j)
                           g[r * n + j] += w * self.grad[segment[r] * n + j];
                       }
                     });
}

// Softmax of an (m x 1) logit column within each segment group.
inline Tensor segment_softmax(const Tensor& logits, std::vector<std::size_t> segment,
                              std::size_t count) {
  if (logits.rank() != 2 || logits.cols() != 1 || logits.rows() != segment.size()) {
    throw ShapeError("segment_softmax: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(segment.size()) + " segment ids");
  }
  const std::size_t m = segment.size();
  std::vector<double> mx(count, -std::numeric_limits<double>::infinity());
  std::vector<double> total(count, 0.0);
  auto L = logits.data();
  for (std::size_t r = 0; r < m; ++r) {
    if (segment[r] >= count) throw ShapeError("segment_softmax: segment id out of range");
    mx[segment[r]] = std::max(mx[segment[r]], L[r]);
  }
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    out[r] = std::exp(L[r] - mx[segment[r]]);
    total[segment[r]] += out[r];
  }
  for (std::size_t r = 0; r < m; ++r) out[r] /= total[segment[r]];
  return make_result({m, 1}, std::move(out), {logits},
                     [count, segment = std::move(segment)](detail::Node& self) {
                       std::vector<double> dot(count, 0.0);
                       for (std::size_t r = 0; r < segment.size(); ++r)
                         dot[segment[r]] += self.value[r] * self.grad[r];
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t r = 0; r < segment.size(); ++r)
                         g[r] += self.value[r] * (self.grad[r] - dot[segment[r]]);
                     });
}

// Compressed neighbor lists: the neighbors of row i are
// index[offset[i] .. offset[i+1]).
struct NeighborLists {
  std::vector<std::size_t> offset{0};
  std::vector<std::size_t> index;

  std::size_t rows() const { return offset.size() - 1; }
};

// out[i] = mean of x over the neighbor list of i (zero for an empty list).
inline Tensor neighbor_mean(const Tensor& x, const NeighborLists& lists) {
  detail::require_matrix(x, "neighbor_mean");
  const std::size_t m = x.rows(), n = x.cols();
  if (lists.rows() != m) {
    throw ShapeError("neighbor_mean: " + std::to_string(lists.rows()) + " neighbor lists for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto X = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t b = lists.offset[i], e = lists.offset[i + 1];
    if (b == e) continue;
    const double w = 1.0 / static_cast<double>(e - b);
    for (std::size_t t = b; t < e; ++t)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += w * X[lists.index[t] * n + j];
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n, lists](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t b = lists.offset[i], e = lists.offset[i + 1];
      if (b == e) continue;
      const double w = 1.0 / static_cast<double>(e - b);
      for (std::size_t t = b; t < e; ++t)
        for (std::size_t j = 0; j < n; ++j) g[lists.index[t] * n + j] += w * self.grad[i * n + j];
    }
  });
}

}  // namespace stmn
