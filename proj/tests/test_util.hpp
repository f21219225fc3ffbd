#pragma once

#include <random>
#include <vector>

#include "stmn/numerics/tensor.hpp"

namespace stmn::testing {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace stmn::testing
