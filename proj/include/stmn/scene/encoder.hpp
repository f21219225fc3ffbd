#pragma once

#include <random>

#include "stmn/numerics/checkpoint.hpp"
#include "stmn/numerics/ops.hpp"
#include "stmn/scene/scene.hpp"

// Small trainable point encoder: a per-point MLP followed by one round of
// k-NN mean aggregation.
namespace stmn::scene {

inline constexpr std::size_t kEncoderInputDims = 3 + kAuxDims;
inline constexpr double kPositionScale = 3.0;

// n x 9 matrix of centered, scaled positions and the raw auxiliary features.
inline Tensor encoder_input(const PointCloudScene& s) {
  const std::size_t n = s.size();
  Vec3 centroid{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) centroid[k] += s.positions[3 * i + k];
  for (auto& c : centroid) c /= static_cast<double>(n);
  std::vector<double> x(n * kEncoderInputDims);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k)
      x[i * kEncoderInputDims + k] = (s.positions[3 * i + k] - centroid[k]) / kPositionScale;
    for (std::size_t k = 0; k < kAuxDims; ++k) x[i * kEncoderInputDims + 3 + k] = s.aux[kAuxDims * i + k];
  }
  return Tensor::matrix(n, kEncoderInputDims, std::move(x));
}

inline void register_encoder(ParamStore& params, std::size_t c_p, std::mt19937_64& rng) {
  params.create("encoder.w1", {kEncoderInputDims, c_p}, Init::uniform_fan_in, rng);
  params.create("encoder.b1", {1, c_p}, Init::zeros, rng);
  params.create("encoder.w2", {c_p, c_p}, Init::uniform_fan_in, rng);
  params.create("encoder.b2", {1, c_p}, Init::zeros, rng);
  params.create("encoder.w3", {c_p, c_p}, Init::uniform_fan_in, rng);
  params.create("encoder.b3", {1, c_p}, Init::zeros, rng);
}

inline Tensor encode_points(const Tensor& input, const NeighborLists& neighbors, const ParamStore& p) {
  Tensor h = relu(add_row(matmul(input, p.get("encoder.w1")), p.get("encoder.b1")));
  h = add_row(matmul(h, p.get("encoder.w2")), p.get("encoder.b2"));
  Tensor context = matmul(neighbor_mean(h, neighbors), p.get("encoder.w3"));
  return relu(add_row(add(h, context), p.get("encoder.b3")));
}

}  // namespace stmn::scene
