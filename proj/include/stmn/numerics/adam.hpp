#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stmn/errors.hpp"
#include "stmn/numerics/tensor.hpp"

namespace stmn {

struct LrSchedule {
  double base = 1e-4;
  std::vector<int> decay_epochs{26, 34, 40};
  double factor = 0.5;

  // Rate in effect once `completed_epochs` full epochs have run.
  double rate(int completed_epochs) const {
    double lr = base;
    for (int d : decay_epochs) {
      if (completed_epochs >= d) lr *= factor;
    }
    return lr;
  }
};

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One bias-corrected Adam update. Parameters without a gradient buffer are
// treated as having zero gradient.
inline void adam_step(OptimizerState& state, std::vector<Tensor>& params, double lr) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto w = params[i].mutable_data();
    if (m.size() != w.size()) {
      throw ShapeError("adam_step: moment buffer of " + std::to_string(m.size()) +
                       " entries for parameter " + shape_str(params[i].shape()));
    }
    if (!params[i].has_grad()) continue;
    auto g = params[i].grad();
    for (std::size_t e = 0; e < w.size(); ++e) {
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g[e];
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g[e] * g[e];
      const double mhat = m[e] / c1;
      const double vhat = v[e] / c2;
      w[e] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace stmn
