#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/harness/evaluate.hpp"

namespace stmn::harness {

struct TimingSummary {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::size_t runs = 0;
};

inline TimingSummary summarize_times(std::vector<double> ms) {
  TimingSummary t;
  t.runs = ms.size();
  if (ms.empty()) return t;
  t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  t.median_ms = n % 2 == 1 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  return t;
}

inline nlohmann::json to_json(const TimingSummary& t) {
  return {{"mean_ms", t.mean_ms}, {"median_ms", t.median_ms}, {"runs", t.runs}};
}

struct BenchResult {
  TimingSummary superpoint_matching, point_matching;
  TimingSummary superpoint_end_to_end, point_end_to_end;
  std::size_t n_points = 0;
  double n_superpoints = 0.0;  // mean over benchmarked scenes

  double speedup() const {
    return superpoint_matching.mean_ms > 0 ? point_matching.mean_ms / superpoint_matching.mean_ms : 0.0;
  }
  double reduction() const { return n_superpoints > 0 ? static_cast<double>(n_points) / n_superpoints : 0.0; }
};

inline nlohmann::json to_json(const BenchResult& b) {
  return {{"superpoint", {{"matching", to_json(b.superpoint_matching)}, {"end_to_end", to_json(b.superpoint_end_to_end)}}},
          {"point", {{"matching", to_json(b.point_matching)}, {"end_to_end", to_json(b.point_end_to_end)}}},
          {"n_points", b.n_points},
          {"mean_superpoints", b.n_superpoints},
          {"points_per_superpoint", b.reduction()},
          {"matching_speedup", b.speedup()}};
}

// Times superpoint-level matching against the same model on singleton superpoints.
// Matching covers pooling and the text-matching stack; end-to-end also includes the point encoder.
inline BenchResult run_bench(const Model& model, const std::vector<Sample>& samples, std::size_t runs) {
  if (samples.empty()) throw ValidationError("bench needs at least one expression");
  if (runs == 0) throw ValidationError("bench needs at least one run");
  NoGradGuard no_grad;
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  std::map<const PreparedScene*, scene::SuperpointPartition> singletons;
  std::map<const PreparedScene*, Tensor> features;
  for (const auto& s : samples) {
    if (singletons.contains(s.scene)) continue;
    singletons.emplace(s.scene, scene::SuperpointPartition::singletons(s.scene->partition.points()));
    features.emplace(s.scene, scene::encode_points(s.scene->input, s.scene->neighbors, model.params));
  }
  BenchResult r;
  std::vector<double> sp_match, pt_match, sp_e2e, pt_e2e;
  double sp_count = 0.0, pt_count = 0.0;
  for (std::size_t i = 0; i < runs; ++i) {
    const auto& s = samples[i % samples.size()];
    const auto& single = singletons.at(s.scene);
    const auto& f = features.at(s.scene);

    auto t0 = clock::now();
    model.match(scene::superpoint_pool(f, s.scene->partition), s.scene->partition, s.expr);
    auto t1 = clock::now();
    model.match(scene::superpoint_pool(f, single), single, s.expr);
    auto t2 = clock::now();
    sp_match.push_back(ms(t0, t1));
    pt_match.push_back(ms(t1, t2));

    t0 = clock::now();
    model.forward(*s.scene, s.expr);
    t1 = clock::now();
    model.match(scene::superpoint_pool(scene::encode_points(s.scene->input, s.scene->neighbors, model.params), single),
                single, s.expr);
    t2 = clock::now();
    sp_e2e.push_back(ms(t0, t1));
    pt_e2e.push_back(ms(t1, t2));
    sp_count += static_cast<double>(s.scene->partition.count());
    pt_count += static_cast<double>(s.scene->partition.points());
  }
  r.superpoint_matching = summarize_times(sp_match);
  r.point_matching = summarize_times(pt_match);
  r.superpoint_end_to_end = summarize_times(sp_e2e);
  r.point_end_to_end = summarize_times(pt_e2e);
  r.n_superpoints = sp_count / static_cast<double>(runs);
  r.n_points = static_cast<std::size_t>(pt_count / static_cast<double>(runs));
  return r;
}

}  // namespace stmn::harness
