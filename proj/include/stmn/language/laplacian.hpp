#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stmn/language/graph.hpp"
#include "stmn/numerics/tensor.hpp"

namespace stmn::language {

struct LaplacianPe {
  Tensor encoding;                  // (N_w + 1) x k, constant
  std::vector<double> eigenvalues;  // one per nonzero column
};

// Combinatorial Laplacian Deg - Adj of the undirected, unweighted graph.
inline Eigen::MatrixXd graph_laplacian(const DependencyGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.node_count);
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : g.edges) {
    if (e.src == e.dst) continue;
    adj(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) = 1.0;
    adj(static_cast<Eigen::Index>(e.dst), static_cast<Eigen::Index>(e.src)) = 1.0;
  }
  Eigen::MatrixXd lap = -adj;
  for (Eigen::Index i = 0; i < n; ++i) lap(i, i) = adj.row(i).sum();
  return lap;
}

// Eigenvectors for the k smallest nonzero eigenvalues, ascending; missing
// columns are zero. Signs are canonical (first non-negligible entry positive)
// unless `sign_rng` is given, in which case each column is flipped at random.
inline LaplacianPe laplacian_pe(const DependencyGraph& g, std::size_t k, std::mt19937_64* sign_rng = nullptr) {
  if (k < 1) throw ConfigError("positional encoding dimension must be at least 1");
  const std::size_t n = g.node_count;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(graph_laplacian(g));
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  std::vector<double> enc(n * k, 0.0);
  LaplacianPe pe;
  std::size_t col = 0;
  for (Eigen::Index idx = 0; idx < values.size() && col < k; ++idx) {
    if (values(idx) < 1e-9) continue;
    Eigen::VectorXd v = vectors.col(idx).normalized();
    for (Eigen::Index r = 0; r < v.size(); ++r) {
      if (std::fabs(v(r)) > 1e-9) {
        if (v(r) < 0) v = -v;
        break;
      }
    }
    if (sign_rng != nullptr && std::bernoulli_distribution(0.5)(*sign_rng)) v = -v;
    for (std::size_t r = 0; r < n; ++r) enc[r * k + col] = v(static_cast<Eigen::Index>(r));
    pe.eigenvalues.push_back(values(idx));
    ++col;
  }
  pe.encoding = Tensor::matrix(n, k, std::move(enc));
  return pe;
}

}  // namespace stmn::language
