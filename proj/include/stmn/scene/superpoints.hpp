#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/errors.hpp"
#include "stmn/numerics/ops.hpp"
#include "stmn/scene/scene.hpp"

namespace stmn::scene {

struct SuperpointPartition {
  std::vector<std::size_t> assignment;       // point -> superpoint
  std::vector<std::vector<std::size_t>> cells;  // superpoint -> sorted point indices

  std::size_t count() const { return cells.size(); }
  std::size_t points() const { return assignment.size(); }

  static SuperpointPartition from_assignment(std::vector<std::size_t> assignment) {
    SuperpointPartition p;
    std::size_t n_cells = 0;
    for (auto a : assignment) n_cells = std::max(n_cells, a + 1);
    p.cells.resize(n_cells);
    for (std::size_t i = 0; i < assignment.size(); ++i) p.cells[assignment[i]].push_back(i);
    p.assignment = std::move(assignment);
    p.validate();
    return p;
  }

  static SuperpointPartition singletons(std::size_t n) {
    std::vector<std::size_t> a(n);
    std::iota(a.begin(), a.end(), std::size_t{0});
    return from_assignment(std::move(a));
  }

  // Cells must be nonempty, disjoint and cover every point; assignment agrees.
  void validate() const {
    std::vector<char> covered(assignment.size(), 0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].empty()) throw ValidationError("superpoint " + std::to_string(c) + " is empty");
      for (auto i : cells[c]) {
        if (i >= assignment.size() || covered[i] || assignment[i] != c) {
          throw ValidationError("superpoint partition is inconsistent at point " + std::to_string(i));
        }
        covered[i] = 1;
      }
    }
    for (char v : covered)
      if (!v) throw ValidationError("superpoint partition does not cover every point");
  }
};

// k nearest neighbors of every point (excluding itself), ordered by
// (distance, index).
inline NeighborLists knn_lists(const PointCloudScene& s, std::size_t k) {
  const std::size_t n = s.size();
  k = std::min(k, n > 0 ? n - 1 : 0);
  NeighborLists lists;
  lists.offset.assign(n + 1, 0);
  lists.index.reserve(n * k);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  const double* P = s.positions.data();
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = P[3 * i] - P[3 * j], dy = P[3 * i + 1] - P[3 * j + 1],
                   dz = P[3 * i + 2] - P[3 * j + 2];
      cand.push_back({dx * dx + dy * dy + dz * dz, j});
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t t = 0; t < k; ++t) lists.index.push_back(cand[t].second);
    lists.offset[i + 1] = lists.index.size();
  }
  return lists;
}

struct SuperpointParams {
  std::size_t knn = 10;
  double spatial_w = 2.0;
  double color_w = 4.0;
  double normal_w = 2.0;
  double threshold = 1.0;
  std::size_t max_cell = 32;
};

// Weighted dissimilarity used for merging; neighbors merge when it is below
// params.threshold.
inline double point_dissimilarity(const PointCloudScene& s, std::size_t i, std::size_t j,
                                  const SuperpointParams& params) {
  auto pi = s.position(i), pj = s.position(j);
  auto ci = s.color(i), cj = s.color(j);
  auto ni = s.normal(i), nj = s.normal(j);
  double dp = 0, dc = 0, dot = 0;
  for (int k = 0; k < 3; ++k) {
    dp += (pi[k] - pj[k]) * (pi[k] - pj[k]);
    dc += (ci[k] - cj[k]) * (ci[k] - cj[k]);
    dot += ni[k] * nj[k];
  }
  return params.spatial_w * std::sqrt(dp) + params.color_w * std::sqrt(dc) +
         params.normal_w * (1.0 - dot);
}

// Symmetrized k-NN graph restricted to similar pairs.
inline std::vector<std::vector<std::size_t>> similarity_graph(const PointCloudScene& s,
                                                              const NeighborLists& knn,
                                                              const SuperpointParams& params) {
  const std::size_t n = s.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = knn.offset[i]; t < knn.offset[i + 1]; ++t) {
      const std::size_t j = knn.index[t];
      if (point_dissimilarity(s, i, j, params) < params.threshold) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    }
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return adj;
}

// Greedy region growing: seeds in index order, breadth-first over the
// similarity graph, each cell capped at max_cell points.
inline SuperpointPartition build_superpoints(const PointCloudScene& s, const SuperpointParams& params) {
  if (params.knn < 1) throw ConfigError("superpoint knn must be at least 1");
  if (params.max_cell < 1) throw ConfigError("superpoint max_cell must be at least 1");
  const std::size_t n = s.size();
  auto adj = similarity_graph(s, knn_lists(s, params.knn), params);
  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> assignment(n, kUnassigned);
  std::size_t next = 0;
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (assignment[seed] != kUnassigned) continue;
    const std::size_t cell = next++;
    std::size_t size = 1;
    assignment[seed] = cell;
    frontier.assign(1, seed);
    while (!frontier.empty() && size < params.max_cell) {
      const std::size_t u = frontier.front();
      frontier.pop_front();
      for (auto v : adj[u]) {
        if (assignment[v] != kUnassigned) continue;
        assignment[v] = cell;
        frontier.push_back(v);
        if (++size >= params.max_cell) break;
      }
    }
  }
  return SuperpointPartition::from_assignment(std::move(assignment));
}

// Row i is the mean of the feature rows in cell i.
inline Tensor superpoint_pool(const Tensor& features, const SuperpointPartition& partition) {
  if (features.rank() != 2 || features.rows() != partition.points()) {
    throw ShapeError("superpoint_pool: features " + shape_str(features.shape()) + " for a partition of " +
                     std::to_string(partition.points()) + " points");
  }
  return segment_mean(features, partition.assignment, partition.count());
}

// 1 for a superpoint whose foreground fraction is strictly above one half.
inline std::vector<double> pool_gt_mask(const std::vector<double>& point_mask,
                                        const SuperpointPartition& partition) {
  if (point_mask.size() != partition.points()) {
    throw ShapeError("pool_gt_mask: mask of " + std::to_string(point_mask.size()) +
                     " points for a partition of " + std::to_string(partition.points()));
  }
  std::vector<double> out(partition.count(), 0.0);
  for (std::size_t c = 0; c < partition.count(); ++c) {
    double fg = 0;
    for (auto i : partition.cells[c]) fg += point_mask[i];
    out[c] = fg / static_cast<double>(partition.cells[c].size()) > 0.5 ? 1.0 : 0.0;
  }
  return out;
}

inline std::vector<double> expand_mask(const std::vector<double>& sp_mask,
                                       const SuperpointPartition& partition) {
  if (sp_mask.size() != partition.count()) {
    throw ShapeError("expand_mask: mask of " + std::to_string(sp_mask.size()) + " superpoints for " +
                     std::to_string(partition.count()));
  }
  std::vector<double> out(partition.points());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sp_mask[partition.assignment[i]];
  return out;
}

inline constexpr const char* kSuperpointFormat = "stmn-superpoints/1";

inline void write_superpoints(const std::string& path, const std::string& scene_id,
                              const SuperpointPartition& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write superpoint cache " + path);
  nlohmann::json j{{"format", kSuperpointFormat}, {"scene_id", scene_id}, {"assignment", p.assignment}};
  out << j.dump() << '\n';
}

inline SuperpointPartition read_superpoints(const std::string& path, const std::string& scene_id,
                                            std::size_t n_points) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open superpoint cache " + path);
  try {
    auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != kSuperpointFormat) throw ValidationError("unsupported format");
    if (j.at("scene_id").get<std::string>() != scene_id) {
      throw ValidationError("cache belongs to scene " + j.at("scene_id").get<std::string>());
    }
    auto a = j.at("assignment").get<std::vector<std::size_t>>();
    if (a.size() != n_points) throw ValidationError("assignment length differs from scene");
    return SuperpointPartition::from_assignment(std::move(a));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace stmn::scene
