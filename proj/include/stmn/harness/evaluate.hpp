#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/harness/model.hpp"

namespace stmn::harness {

// One (scene, expression) pair ready for the model.
struct Sample {
  const PreparedScene* scene = nullptr;
  PreparedExpression expr;
  GroundTruth gt;
};

inline std::vector<Sample> make_samples(const Model& model, SceneCache& scenes,
                                        const std::vector<const ExpressionRecord*>& records) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto* r : records) {
    Sample s;
    s.scene = &scenes.get(r->scene_id);
    s.expr = model.prepare_expression(*r);
    const auto& ids = s.scene->instance_id;
    if (std::find(ids.begin(), ids.end(), r->target_instance) == ids.end()) {
      throw ValidationError("expression " + r->expr_id + " targets instance " + std::to_string(r->target_instance) +
                            " which is absent from scene " + r->scene_id);
    }
    s.gt = make_ground_truth(*s.scene, s.expr);
    out.push_back(std::move(s));
  }
  return out;
}

struct PredictionRecord {
  std::string scene_id;
  std::string expr_id;
  std::string tag;
  int kernel_index = -1;
  std::vector<double> superpoint_mask;
  std::vector<double> point_mask;
  std::optional<double> iou;
  double quality = 0.0;
  double latency_ms = 0.0;
};

inline nlohmann::json to_json(const PredictionRecord& r) {
  nlohmann::json j{{"scene_id", r.scene_id},
                   {"expr_id", r.expr_id},
                   {"kernel_index", r.kernel_index},
                   {"superpoint_mask", r.superpoint_mask},
                   {"point_mask", r.point_mask},
                   {"quality_score", r.quality},
                   {"latency_ms", r.latency_ms}};
  if (r.iou) j["iou_vs_gt"] = *r.iou;
  if (!r.tag.empty()) j["tag"] = r.tag;
  return j;
}

inline PredictionRecord predict(const Model& model, const PreparedScene& scene, const PreparedExpression& expr,
                                const std::vector<double>* gt_point_mask = nullptr) {
  NoGradGuard no_grad;
  const auto start = std::chrono::steady_clock::now();
  const auto f = model.forward(scene, expr);
  const auto stop = std::chrono::steady_clock::now();
  PredictionRecord r;
  r.scene_id = scene.scene_id;
  r.expr_id = expr.expr_id;
  r.tag = expr.tag;
  r.kernel_index = f.stm.kernel_index;
  r.superpoint_mask = f.sp_probs;
  r.point_mask = f.point_mask;
  r.quality = f.stm.quality.item();
  r.latency_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  if (gt_point_mask != nullptr) r.iou = objective::mask_iou(r.point_mask, *gt_point_mask);
  return r;
}

// Accuracy at threshold k counts predictions whose IoU strictly exceeds k.
inline nlohmann::json summarize_ious(const std::vector<double>& ious) {
  double total = 0.0;
  std::size_t at025 = 0, at05 = 0;
  for (double v : ious) {
    total += v;
    at025 += v > 0.25;
    at05 += v > 0.5;
  }
  const double n = static_cast<double>(ious.size());
  if (ious.empty()) return {{"mIoU", 0.0}, {"acc_at_025", 0.0}, {"acc_at_05", 0.0}, {"n_expressions", 0}};
  return {{"mIoU", total / n},
          {"acc_at_025", static_cast<double>(at025) / n},
          {"acc_at_05", static_cast<double>(at05) / n},
          {"n_expressions", ious.size()}};
}

// Aggregates in expr_id order so the result does not depend on record order.
inline nlohmann::json aggregate_metrics(std::vector<PredictionRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) { return a.expr_id < b.expr_id; });
  std::vector<double> all, unique, multiple;
  double latency = 0.0;
  for (const auto& r : records) {
    if (!r.iou) throw ValidationError("prediction " + r.expr_id + " has no ground-truth IoU");
    all.push_back(*r.iou);
    if (r.tag == "unique") unique.push_back(*r.iou);
    if (r.tag == "multiple") multiple.push_back(*r.iou);
    latency += r.latency_ms;
  }
  auto m = summarize_ious(all);
  m["per_tag"] = {{"unique", summarize_ious(unique)}, {"multiple", summarize_ious(multiple)}};
  m["mean_latency_ms"] = records.empty() ? 0.0 : latency / static_cast<double>(records.size());
  return m;
}

struct EvalReport {
  nlohmann::json metrics;
  std::vector<PredictionRecord> predictions;  // sorted by expr_id
};

inline EvalReport evaluate_samples(const Model& model, const std::vector<Sample>& samples, std::size_t workers = 1) {
  std::vector<PredictionRecord> out(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (std::size_t i = next++; i < samples.size(); i = next++) {
        const auto& s = samples[i];
        out[i] = predict(model, *s.scene, s.expr, &s.gt.point_mask);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = samples.size();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, samples.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::sort(out.begin(), out.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) { return a.expr_id < b.expr_id; });
  EvalReport r;
  r.metrics = aggregate_metrics(out);
  r.predictions = std::move(out);
  return r;
}

inline EvalReport evaluate(const Model& model, const DatasetManifest& manifest, const std::string& split,
                           std::size_t workers = 1) {
  const auto records = manifest.split(split);
  if (records.empty()) throw ValidationError("dataset has no expressions in split '" + split + "'");
  SceneCache scenes(manifest, model.config.model.encoder_knn);
  const auto samples = make_samples(model, scenes, records);
  auto report = evaluate_samples(model, samples, workers);
  report.metrics["split"] = split;
  return report;
}

}  // namespace stmn::harness
