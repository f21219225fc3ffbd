#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stmn/numerics/tensor.hpp"

namespace stmn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
};

// Compares analytic gradients of a scalar function against central differences.
// The per-entry error is |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult finite_difference_check(const std::function<Tensor()>& f,
                                               std::vector<Tensor> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  f().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.size(), 0.0));
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double saved = values[e];
      values[e] = saved + h;
      const double up = f().item();
      values[e] = saved - h;
      const double down = f().item();
      values[e] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::fabs(analytic[pi][e] - numeric) / std::max(1.0, std::fabs(numeric));
      ++result.entries;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

}  // namespace stmn
